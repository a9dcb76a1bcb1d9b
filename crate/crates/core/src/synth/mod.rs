//! Synthetic layer images from slice stacks: seeded domain randomisation,
//! defect injection and balanced, exactly-labelled datasets.
//!
//! Every random draw comes from [`crate::rng::Rng`]. A job consumes one
//! stream; datasets derive one child stream per job with [`Rng::split`], so
//! outputs do not depend on the order in which jobs are produced.

mod defects;
mod manifest;
pub mod raster;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{gaussian_blur_f64, quantize, save_image, GrayImage, ImageError};
use crate::rng::Rng;
use crate::slicer::{Contour, SliceStack};

pub use defects::{inject_defect, occlude, DefectClass, DefectParams, DefectSpec, LayerRange};
pub use manifest::{DatasetManifest, ManifestRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid randomisation config: {0}")]
    Config(String),
    #[error("sample is empty")]
    EmptySample,
    #[error("mask {index} has {mask} entries but its image has {pixels} pixels")]
    MaskMismatch { index: usize, mask: usize, pixels: usize },
    #[error("defect plan refers to layers {start}..={end} but the stack has {layers} layers")]
    LayerOutOfRange { start: usize, end: usize, layers: usize },
    #[error("defect ranges overlap at layer {0}")]
    OverlappingDefects(usize),
    #[error("'good' is not an injectable defect")]
    GoodDefect,
    #[error("porosity requested on an image without part pixels")]
    EmptyPart,
    #[error("class '{class}' has {available} images, {requested} requested")]
    InsufficientClass { class: String, available: usize, requested: usize },
    #[error("duplicate image path in manifest: {0}")]
    DuplicatePath(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("svg: {0}")]
    Svg(String),
    #[error("canvas must be non-empty and scale positive")]
    Canvas,
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Closed interval `[lo, hi]`, serialised as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Interval { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Grows the interval by `fraction` of its width, split evenly between
    /// both ends, then clamps to `[min, max]`.
    pub fn widened(&self, fraction: f64, min: f64, max: f64) -> Interval {
        let pad = self.width() * fraction / 2.0;
        Interval::new((self.lo - pad).max(min), (self.hi + pad).min(max))
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        rng.uniform(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    /// One draw per job.
    Jobwise,
    /// A fresh draw per layer.
    Layerwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScopeFlags {
    pub bg_intensity: Scope,
    pub part_intensity: Scope,
    pub position_jitter: Scope,
    pub translucency_alpha: Scope,
    pub contour_blur_sigma: Scope,
    pub per_layer_noise_sigma: Scope,
}

impl Default for ScopeFlags {
    fn default() -> Self {
        Self {
            bg_intensity: Scope::Jobwise,
            part_intensity: Scope::Jobwise,
            position_jitter: Scope::Layerwise,
            translucency_alpha: Scope::Layerwise,
            contour_blur_sigma: Scope::Layerwise,
            per_layer_noise_sigma: Scope::Layerwise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomisationConfig {
    pub bg_intensity: Interval,
    pub part_intensity: Interval,
    /// Applied independently to x and y, in pixels.
    pub position_jitter: Interval,
    pub translucency_alpha: Interval,
    pub contour_blur_sigma: Interval,
    pub per_layer_noise_sigma: Interval,
    pub scope: ScopeFlags,
}

impl Default for RandomisationConfig {
    fn default() -> Self {
        Self {
            bg_intensity: Interval::new(20.0, 60.0),
            part_intensity: Interval::new(120.0, 200.0),
            position_jitter: Interval::new(-3.0, 3.0),
            translucency_alpha: Interval::new(0.6, 1.0),
            contour_blur_sigma: Interval::new(0.5, 1.5),
            per_layer_noise_sigma: Interval::new(1.0, 4.0),
            scope: ScopeFlags::default(),
        }
    }
}

impl RandomisationConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let named = [
            ("bg_intensity", self.bg_intensity),
            ("part_intensity", self.part_intensity),
            ("position_jitter", self.position_jitter),
            ("translucency_alpha", self.translucency_alpha),
            ("contour_blur_sigma", self.contour_blur_sigma),
            ("per_layer_noise_sigma", self.per_layer_noise_sigma),
        ];
        for (name, i) in named {
            if !(i.lo <= i.hi) || !i.lo.is_finite() || !i.hi.is_finite() {
                return Err(SynthError::Config(format!("{name}: lo > hi or non-finite")));
            }
        }
        let within = |i: Interval, lo: f64, hi: f64| i.lo >= lo && i.hi <= hi;
        if !within(self.translucency_alpha, 0.0, 1.0) {
            return Err(SynthError::Config("translucency_alpha must lie in [0, 1]".into()));
        }
        if !within(self.bg_intensity, 0.0, 255.0) || !within(self.part_intensity, 0.0, 255.0) {
            return Err(SynthError::Config("intensities must lie in [0, 255]".into()));
        }
        if self.contour_blur_sigma.lo < 0.0 || self.per_layer_noise_sigma.lo < 0.0 {
            return Err(SynthError::Config("sigmas must be non-negative".into()));
        }
        Ok(())
    }

    /// Every interval widened by `fraction` of its width, kept valid.
    pub fn widened(&self, fraction: f64) -> Self {
        Self {
            bg_intensity: self.bg_intensity.widened(fraction, 0.0, 255.0),
            part_intensity: self.part_intensity.widened(fraction, 0.0, 255.0),
            position_jitter: self.position_jitter.widened(fraction, f64::NEG_INFINITY, f64::INFINITY),
            translucency_alpha: self.translucency_alpha.widened(fraction, 0.0, 1.0),
            contour_blur_sigma: self.contour_blur_sigma.widened(fraction, 0.0, f64::INFINITY),
            per_layer_noise_sigma: self.per_layer_noise_sigma.widened(fraction, 0.0, f64::INFINITY),
            scope: self.scope,
        }
    }
}

/// Pooled `[min, max]` of background (outside mask) and part (inside mask)
/// pixels over a sample of real images. Intervals without any pixels keep
/// their defaults.
pub fn derive_randomisation_intervals(
    real_sample: &[GrayImage],
    part_masks: &[Vec<bool>],
) -> Result<RandomisationConfig, SynthError> {
    if real_sample.is_empty() {
        return Err(SynthError::EmptySample);
    }
    if part_masks.len() != real_sample.len() {
        return Err(SynthError::MaskMismatch { index: part_masks.len().min(real_sample.len()), mask: part_masks.len(), pixels: real_sample.len() });
    }
    let (mut bg, mut part) = ((u8::MAX, u8::MIN), (u8::MAX, u8::MIN));
    for (index, (img, mask)) in real_sample.iter().zip(part_masks).enumerate() {
        if mask.len() != img.pixels().len() {
            return Err(SynthError::MaskMismatch { index, mask: mask.len(), pixels: img.pixels().len() });
        }
        for (&p, &m) in img.pixels().iter().zip(mask) {
            let slot = if m { &mut part } else { &mut bg };
            slot.0 = slot.0.min(p);
            slot.1 = slot.1.max(p);
        }
    }
    let mut cfg = RandomisationConfig::default();
    if bg.0 <= bg.1 {
        cfg.bg_intensity = Interval::new(bg.0 as f64, bg.1 as f64);
    }
    if part.0 <= part.1 {
        cfg.part_intensity = Interval::new(part.0 as f64, part.1 as f64);
    }
    Ok(cfg)
}

/// Concrete nuisance parameters for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub bg: f64,
    pub part: f64,
    pub dx: f64,
    pub dy: f64,
    pub alpha: f64,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

impl LayerParams {
    /// Plain two-level rendering without any randomisation.
    pub fn flat(bg: f64, part: f64) -> Self {
        Self { bg, part, dx: 0.0, dy: 0.0, alpha: 1.0, blur_sigma: 0.0, noise_sigma: 0.0 }
    }

    pub fn within(&self, cfg: &RandomisationConfig) -> bool {
        cfg.bg_intensity.contains(self.bg)
            && cfg.part_intensity.contains(self.part)
            && cfg.position_jitter.contains(self.dx)
            && cfg.position_jitter.contains(self.dy)
            && cfg.translucency_alpha.contains(self.alpha)
            && cfg.contour_blur_sigma.contains(self.blur_sigma)
            && cfg.per_layer_noise_sigma.contains(self.noise_sigma)
    }
}

/// Draws layer parameters honouring each parameter's scope.
#[derive(Debug, Clone)]
pub struct ParamSampler {
    cfg: RandomisationConfig,
    job: LayerParams,
}

impl ParamSampler {
    /// Fixes the jobwise draws.
    pub fn new(cfg: RandomisationConfig, rng: &mut Rng) -> Self {
        let job = Self::draw(&cfg, rng);
        Self { cfg, job }
    }

    fn draw(cfg: &RandomisationConfig, rng: &mut Rng) -> LayerParams {
        LayerParams {
            bg: cfg.bg_intensity.sample(rng),
            part: cfg.part_intensity.sample(rng),
            dx: cfg.position_jitter.sample(rng),
            dy: cfg.position_jitter.sample(rng),
            alpha: cfg.translucency_alpha.sample(rng),
            blur_sigma: cfg.contour_blur_sigma.sample(rng),
            noise_sigma: cfg.per_layer_noise_sigma.sample(rng),
        }
    }

    pub fn layer(&self, rng: &mut Rng) -> LayerParams {
        let fresh = Self::draw(&self.cfg, rng);
        let s = self.cfg.scope;
        let pick = |scope: Scope, job: f64, layer: f64| if scope == Scope::Jobwise { job } else { layer };
        LayerParams {
            bg: pick(s.bg_intensity, self.job.bg, fresh.bg),
            part: pick(s.part_intensity, self.job.part, fresh.part),
            dx: pick(s.position_jitter, self.job.dx, fresh.dx),
            dy: pick(s.position_jitter, self.job.dy, fresh.dy),
            alpha: pick(s.translucency_alpha, self.job.alpha, fresh.alpha),
            blur_sigma: pick(s.contour_blur_sigma, self.job.blur_sigma, fresh.blur_sigma),
            noise_sigma: pick(s.per_layer_noise_sigma, self.job.noise_sigma, fresh.noise_sigma),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RasterLayer {
    pub image: GrayImage,
    pub part_mask: Vec<bool>,
    /// Some contour left the canvas after jitter and was clipped.
    pub clipped: bool,
}

/// Renders one layer: even-odd fill at the part/background levels, blend
/// with the previous layer, blur, then clamped Gaussian pixel noise.
/// Contours are in millimetres and land at `mm * scale + (dx, dy)` pixels.
pub fn rasterize_layer(
    contours: &[Contour],
    params: &LayerParams,
    prev: Option<&GrayImage>,
    canvas: (usize, usize),
    scale: f64,
    rng: &mut Rng,
) -> Result<RasterLayer, SynthError> {
    let (w, h) = canvas;
    if w == 0 || h == 0 || !(scale > 0.0) {
        return Err(SynthError::Canvas);
    }
    if let Some(p) = prev {
        if p.dims() != canvas {
            return Err(SynthError::Canvas);
        }
    }
    let polys = raster::to_pixels(contours, scale, [params.dx, params.dy]);
    let (part_mask, clipped) = raster::fill_even_odd(&polys, w, h);
    let mut values: Vec<f64> = part_mask.iter().map(|&m| if m { params.part } else { params.bg }).collect();
    if let Some(p) = prev {
        let a = params.alpha;
        for (v, &q) in values.iter_mut().zip(p.pixels()) {
            *v = a * *v + (1.0 - a) * q as f64;
        }
    }
    if params.blur_sigma > 0.0 {
        values = gaussian_blur_f64(&values, w, h, params.blur_sigma);
    }
    if params.noise_sigma > 0.0 {
        for v in values.iter_mut() {
            *v += params.noise_sigma * rng.normal();
        }
    }
    let image = GrayImage::new(w, h, values.iter().map(|&v| quantize(v)).collect())?;
    Ok(RasterLayer { image, part_mask, clipped })
}

// ------------------------------------------------------------------------
// Jobs

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CanvasOptions {
    pub width: usize,
    pub height: usize,
    /// Pixels per millimetre.
    pub scale: f64,
}

impl Default for CanvasOptions {
    fn default() -> Self {
        Self { width: 224, height: 224, scale: 40.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobOutput {
    pub images: Vec<GrayImage>,
    pub records: Vec<ManifestRecord>,
    /// Parameters drawn for every layer, in order.
    pub sample_log: Vec<LayerParams>,
    pub clipped_layers: usize,
}

fn label_layers(plan: &[DefectSpec], layers: usize) -> Result<Vec<Option<usize>>, SynthError> {
    let mut active = vec![None; layers];
    for (i, d) in plan.iter().enumerate() {
        if d.class == DefectClass::Good {
            continue;
        }
        if d.layers.is_empty() || d.layers.end >= layers {
            return Err(SynthError::LayerOutOfRange { start: d.layers.start, end: d.layers.end, layers });
        }
        for k in d.layers.start..=d.layers.end {
            if active[k].is_some() {
                return Err(SynthError::OverlappingDefects(k));
            }
            active[k] = Some(i);
        }
    }
    Ok(active)
}

/// Renders every layer of a job in order, chaining the previous clean layer
/// for translucency and injecting planned defects.
pub fn generate_job(
    stack: &SliceStack,
    cfg: &RandomisationConfig,
    seed: u64,
    plan: &[DefectSpec],
    canvas: &CanvasOptions,
    job_id: usize,
) -> Result<JobOutput, SynthError> {
    cfg.validate()?;
    let active = label_layers(plan, stack.len())?;
    let mut rng = Rng::new(seed);
    let sampler = ParamSampler::new(*cfg, &mut rng);

    // Centre the job's footprint on the canvas.
    let b = stack.bounds;
    let centre_mm = [(b.min[0] + b.max[0]) / 2.0, (b.min[1] + b.max[1]) / 2.0];
    let shift = [
        canvas.width as f64 / 2.0 / canvas.scale - centre_mm[0],
        canvas.height as f64 / 2.0 / canvas.scale - centre_mm[1],
    ];

    let mut out = JobOutput { images: Vec::new(), records: Vec::new(), sample_log: Vec::new(), clipped_layers: 0 };
    let mut prev: Option<GrayImage> = None;
    for (k, layer) in stack.layers.iter().enumerate() {
        let params = sampler.layer(&mut rng);
        let contours: Vec<Contour> = layer.contours.iter().map(|c| c.translated(shift[0], shift[1])).collect();
        let raster = rasterize_layer(&contours, &params, prev.as_ref(), (canvas.width, canvas.height), canvas.scale, &mut rng)?;
        out.clipped_layers += raster.clipped as usize;
        let (image, label, defect_params) = match active[k] {
            Some(i) => {
                let spec = &plan[i];
                let (img, _, p) = inject_defect(&raster.image, spec, Some(&raster.part_mask), &mut rng)?;
                (img, spec.class.label(), Some(p))
            }
            None => (raster.image.clone(), DefectClass::Good.label(), None),
        };
        out.records.push(ManifestRecord {
            image_path: format!("job_{job_id:04}/layer_{k:04}.pgm"),
            job_id,
            layer_index: k,
            class_label: label.to_string(),
            seed,
            defect_params,
        });
        out.images.push(image);
        out.sample_log.push(params);
        prev = Some(raster.image);
    }
    Ok(out)
}

/// Defect recipe used to build random plans.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectTemplate {
    pub class: DefectClass,
    /// Offset magnitude drawn from here; sign kept as given.
    pub offset: Interval,
    pub size: Interval,
    #[serde(default = "default_template_density")]
    pub density: Interval,
}

fn default_template_density() -> Interval {
    Interval::new(0.02, 0.06)
}

/// Layout of random defect plans over a job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanConfig {
    pub templates: Vec<DefectTemplate>,
    /// Length of each defect run, in layers.
    pub run_length: [usize; 2],
    /// Clean layers between runs.
    pub gap_length: [usize; 2],
}

/// Alternates clean gaps and defect runs across the job, cycling through the
/// templates in a shuffled order.
pub fn random_plan(layers: usize, cfg: &PlanConfig, rng: &mut Rng) -> Vec<DefectSpec> {
    let mut plan = Vec::new();
    if cfg.templates.is_empty() || layers == 0 {
        return plan;
    }
    let mut order: Vec<usize> = (0..cfg.templates.len()).collect();
    rng.shuffle(&mut order);
    let mut k = rng.range_inclusive(cfg.gap_length[0] as i64, cfg.gap_length[1] as i64) as usize;
    let mut t = 0usize;
    while k < layers {
        let tpl = &cfg.templates[order[t % order.len()]];
        t += 1;
        let len = rng.range_inclusive(cfg.run_length[0].max(1) as i64, cfg.run_length[1].max(1) as i64) as usize;
        let end = (k + len - 1).min(layers - 1);
        let offset = rng.uniform(tpl.offset.lo, tpl.offset.hi);
        plan.push(DefectSpec {
            class: tpl.class,
            layers: LayerRange::new(k, end),
            intensity_offset: offset,
            size: tpl.size,
            density: tpl.density,
        });
        k = end + 1 + rng.range_inclusive(cfg.gap_length[0] as i64, cfg.gap_length[1] as i64) as usize;
    }
    plan
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub images: Vec<GrayImage>,
    pub clipped_layers: usize,
}

impl Dataset {
    /// Writes every image below `dir` and the manifest as `manifest.jsonl`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf, SynthError> {
        let dir = dir.as_ref();
        for (r, img) in self.manifest.records.iter().zip(&self.images) {
            let path = dir.join(&r.image_path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|source| SynthError::Io { path: parent.to_path_buf(), source })?;
            }
            save_image(img, &path)?;
        }
        let manifest = dir.join("manifest.jsonl");
        self.manifest.write(&manifest)?;
        Ok(manifest)
    }
}

/// Generates all jobs and subsamples exactly `count` images of each listed
/// class, uniformly at random. Records keep job/layer order.
pub fn generate_dataset_with_targets(
    jobs: &[(SliceStack, Vec<DefectSpec>)],
    cfg: &RandomisationConfig,
    seed: u64,
    targets: &[(DefectClass, usize)],
    canvas: &CanvasOptions,
) -> Result<Dataset, SynthError> {
    let root = Rng::new(seed);
    let mut records = Vec::new();
    let mut images = Vec::new();
    let mut clipped_layers = 0;
    for (job_id, (stack, plan)) in jobs.iter().enumerate() {
        let job_seed = root.split(job_id as u64).seed();
        let out = generate_job(stack, cfg, job_seed, plan, canvas, job_id)?;
        clipped_layers += out.clipped_layers;
        records.extend(out.records);
        images.extend(out.images);
    }

    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.class_label.as_str()).or_default().push(i);
    }
    let mut pick_rng = root.split(u64::MAX);
    let mut keep = Vec::new();
    for &(class, count) in targets {
        let pool = by_class.get(class.label()).cloned().unwrap_or_default();
        if pool.len() < count {
            return Err(SynthError::InsufficientClass { class: class.label().into(), available: pool.len(), requested: count });
        }
        let mut pool = pool;
        for i in 0..count {
            let j = i + pick_rng.below((pool.len() - i) as u64) as usize;
            pool.swap(i, j);
        }
        keep.extend_from_slice(&pool[..count]);
    }
    keep.sort_unstable();
    let mut picked_records = Vec::with_capacity(keep.len());
    let mut picked_images = Vec::with_capacity(keep.len());
    for i in keep {
        picked_records.push(records[i].clone());
        picked_images.push(images[i].clone());
    }
    Ok(Dataset { manifest: DatasetManifest::new(picked_records)?, images: picked_images, clipped_layers })
}

/// Balanced five-class dataset with `target_per_class` images per class.
pub fn generate_dataset(
    jobs: &[(SliceStack, Vec<DefectSpec>)],
    cfg: &RandomisationConfig,
    seed: u64,
    target_per_class: usize,
    canvas: &CanvasOptions,
) -> Result<Dataset, SynthError> {
    let targets: Vec<(DefectClass, usize)> = DefectClass::QUALITY.iter().map(|&c| (c, target_per_class)).collect();
    generate_dataset_with_targets(jobs, cfg, seed, &targets, canvas)
}
