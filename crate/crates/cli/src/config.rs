//! The pipeline configuration file and the resolved run context.
//!
//! One JSON file carries a section per subcommand. Relative input paths
//! resolve against the config file's directory, except paths starting with
//! `$out/`, which resolve against the output root so that one stage can
//! consume what an earlier stage wrote. Output paths always resolve against
//! the output root.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use layerscope::cnn::TrainConfig;
use layerscope::desk::{desk_canvas, quality_plan, DESK_LAYERS};
use layerscope::image::Rect;
use layerscope::registration::{EccOptions, WarpKind};
use layerscope::synth::{CanvasOptions, PlanConfig, RandomisationConfig};
use serde::{Deserialize, Serialize};

use crate::report::sha256_hex;
use crate::{CliError, Common};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    /// Output root; `--out` overrides it.
    pub output: PathBuf,
    pub calibrate: Option<CalibrateSection>,
    pub prepare: Option<PrepareSection>,
    pub clean: Option<CleanSection>,
    pub slice: Option<SliceSection>,
    pub synth: Option<SynthSection>,
    pub train: Option<TrainSection>,
    pub classify: Option<ClassifySection>,
    pub report: Option<ReportSection>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output: PathBuf::from("out"),
            calibrate: None,
            prepare: None,
            clean: None,
            slice: None,
            synth: None,
            train: None,
            classify: None,
            report: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    /// Correspondence file: a list of views, each a list of
    /// `{object: [x, y, z], image: [u, v]}`.
    pub views: PathBuf,
    #[serde(default)]
    pub image_size: Option<[usize; 2]>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default = "defaults::camera")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepareSection {
    /// Directory of raw `.pgm` layer images.
    pub input: PathBuf,
    /// Camera file written by `calibrate`.
    pub camera: PathBuf,
    /// Known warp file. Exactly one of `warp` and `reference` is required.
    #[serde(default)]
    pub warp: Option<PathBuf>,
    /// Reference-frame image to register layer `reference_layer` against.
    #[serde(default)]
    pub reference: Option<PathBuf>,
    #[serde(default)]
    pub reference_layer: usize,
    #[serde(default = "defaults::warp_kind")]
    pub kind: WarpKind,
    #[serde(default)]
    pub ecc: EccOptions,
    /// Crop rectangle; the full frame when absent.
    #[serde(default)]
    pub roi: Option<Rect>,
    #[serde(default = "defaults::prepared")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CleanSection {
    pub input: PathBuf,
    pub model: PathBuf,
    /// Images with `P(bad_class) >= threshold` go to `bad/`.
    #[serde(default = "defaults::threshold")]
    pub threshold: f64,
    #[serde(default = "defaults::bad_class")]
    pub bad_class: String,
    #[serde(default = "defaults::clean")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSection {
    pub mesh: PathBuf,
    pub layer_height: f64,
    /// SVG pixels per millimetre.
    #[serde(default = "defaults::svg_scale")]
    pub scale: f64,
    #[serde(default = "defaults::slices")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// STL files to print.
    pub meshes: Vec<PathBuf>,
    /// Names of built-in desk parts (`cube`, `slab`, `cylinder`, `tube`,
    /// `sphere`, `torus`). All of them when both lists are empty.
    pub builtin: Vec<String>,
    /// Layers per job; each mesh is sliced to exactly this many.
    pub layers: usize,
    /// Number of jobs, cycling through the meshes.
    pub jobs: usize,
    pub plan: PlanConfig,
    pub randomisation: RandomisationConfig,
    pub canvas: CanvasOptions,
    /// Images per quality class, unless `targets` lists explicit counts.
    pub per_class: usize,
    pub targets: BTreeMap<String, usize>,
    pub output: PathBuf,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            meshes: Vec::new(),
            builtin: Vec::new(),
            layers: DESK_LAYERS,
            jobs: 12,
            plan: quality_plan(),
            randomisation: RandomisationConfig::default(),
            canvas: desk_canvas(),
            per_class: 10,
            targets: BTreeMap::new(),
            output: defaults::dataset(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Dataset directory holding `manifest.jsonl`.
    pub dataset: PathBuf,
    #[serde(default = "defaults::classes")]
    pub classes: Vec<String>,
    /// Manifest label renames applied before class lookup, e.g.
    /// `{"occluded": "bad"}`.
    #[serde(default)]
    pub label_map: BTreeMap<String, String>,
    /// Square input side; the first image's width when absent.
    #[serde(default)]
    pub input_size: Option<usize>,
    #[serde(default)]
    pub conv_channels: Option<Vec<usize>>,
    #[serde(default)]
    pub dense_hidden: Option<usize>,
    /// Hyper-parameters. Its `seed` is replaced by the run seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "defaults::model")]
    pub output: PathBuf,
    #[serde(default = "defaults::history")]
    pub history: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifySection {
    pub model: PathBuf,
    /// Labelled dataset directory. Exactly one of `dataset` and `input`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Directory of unlabelled `.pgm` images.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub label_map: BTreeMap<String, String>,
    #[serde(default = "defaults::probabilities")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    /// Probability table written by `classify`.
    pub probabilities: PathBuf,
    /// Class whose one-vs-rest F1 is reported; macro F1 when absent.
    #[serde(default)]
    pub positive_class: Option<String>,
    /// Test set for repeated training, needed when repetitions > 1. Training
    /// uses the `train` section.
    #[serde(default)]
    pub test_dataset: Option<PathBuf>,
    /// Independent training runs for the confidence intervals; `--repetitions`
    /// overrides it.
    #[serde(default = "defaults::repetitions")]
    pub repetitions: usize,
    #[serde(default = "defaults::report")]
    pub output: PathBuf,
}

mod defaults {
    use super::*;

    pub fn camera() -> PathBuf {
        "camera.json".into()
    }
    pub fn warp_kind() -> WarpKind {
        WarpKind::Euclidean
    }
    pub fn prepared() -> PathBuf {
        "prepared".into()
    }
    pub fn threshold() -> f64 {
        0.5
    }
    pub fn bad_class() -> String {
        "bad".into()
    }
    pub fn clean() -> PathBuf {
        "clean".into()
    }
    pub fn svg_scale() -> f64 {
        10.0
    }
    pub fn slices() -> PathBuf {
        "slices".into()
    }
    pub fn dataset() -> PathBuf {
        "dataset".into()
    }
    pub fn classes() -> Vec<String> {
        layerscope::synth::DefectClass::QUALITY.iter().map(|c| c.label().to_string()).collect()
    }
    pub fn model() -> PathBuf {
        "model.lsw".into()
    }
    pub fn history() -> PathBuf {
        "history.csv".into()
    }
    pub fn probabilities() -> PathBuf {
        "probabilities.csv".into()
    }
    pub fn repetitions() -> usize {
        1
    }
    pub fn report() -> PathBuf {
        "report.json".into()
    }
}

/// A loaded configuration with flags applied.
#[derive(Debug, Clone)]
pub struct Context {
    pub config: PipelineConfig,
    pub config_dir: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    /// SHA-256 of the config file bytes.
    pub config_hash: String,
    pub threshold: Option<f64>,
    pub repetitions: Option<usize>,
}

impl Context {
    pub fn load(flags: &Common) -> Result<Self, CliError> {
        if !flags.config.is_file() {
            return Err(CliError::Missing(flags.config.clone()));
        }
        let bytes = std::fs::read(&flags.config).map_err(CliError::io(&flags.config))?;
        let config: PipelineConfig =
            serde_json::from_slice(&bytes).map_err(|e| CliError::Config(format!("{}: {e}", flags.config.display())))?;
        let config_dir = flags.config.parent().map(Path::to_path_buf).unwrap_or_default();
        let out = match &flags.out {
            Some(o) => o.clone(),
            None if config.output.is_absolute() => config.output.clone(),
            None => config_dir.join(&config.output),
        };
        if let Some(t) = flags.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(CliError::Config(format!("threshold {t} outside [0, 1]")));
            }
        }
        if flags.repetitions == Some(0) {
            return Err(CliError::Config("repetitions must be >= 1".into()));
        }
        Ok(Self {
            seed: flags.seed.unwrap_or(config.seed),
            config,
            config_dir,
            out,
            config_hash: sha256_hex(&bytes),
            threshold: flags.threshold,
            repetitions: flags.repetitions,
        })
    }

    /// Resolves an input path.
    pub fn input(&self, p: &Path) -> PathBuf {
        if let Ok(rest) = p.strip_prefix("$out") {
            self.out.join(rest)
        } else if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.config_dir.join(p)
        }
    }

    /// Resolves an input path that must exist.
    pub fn existing(&self, p: &Path) -> Result<PathBuf, CliError> {
        let path = self.input(p);
        if path.exists() {
            Ok(path)
        } else {
            Err(CliError::Missing(path))
        }
    }

    /// Resolves an output path below the output root.
    pub fn output(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out.join(p)
        }
    }

    pub fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        s.as_ref().ok_or_else(|| CliError::Config(format!("config has no \"{name}\" section")))
    }
}
