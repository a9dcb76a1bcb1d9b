use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::{cross_entropy, BnMode};
use super::metrics::{argmax, summarize_repetitions, F1Kind, Metrics, RepetitionSummary};
use super::model::{ModelSpec, Network};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::tensor::Tensor;
use super::CnnError;
use crate::image::{load_image, GrayImage};
use crate::rng::Rng;
use crate::synth::DatasetManifest;

/// Labelled images with class indices into `class_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<GrayImage>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    /// Source path per image, empty for in-memory sets.
    pub paths: Vec<String>,
}

impl Dataset {
    pub fn new(images: Vec<GrayImage>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self, CnnError> {
        if images.len() != labels.len() {
            return Err(CnnError::Shape(format!("{} images, {} labels", images.len(), labels.len())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= class_names.len()) {
            return Err(CnnError::LabelOutOfRange { label: l, classes: class_names.len() });
        }
        let paths = vec![String::new(); images.len()];
        Ok(Self { images, labels, class_names, paths })
    }

    /// Loads every manifest image below `root`. Labels pass through
    /// `label_map` first (unmapped labels are kept) and must then be one of
    /// `class_names`.
    pub fn from_manifest(
        manifest: &DatasetManifest,
        root: &Path,
        class_names: &[String],
        label_map: &BTreeMap<String, String>,
    ) -> Result<Self, CnnError> {
        let mut images = Vec::with_capacity(manifest.len());
        let mut labels = Vec::with_capacity(manifest.len());
        let mut paths = Vec::with_capacity(manifest.len());
        for r in &manifest.records {
            let label = label_map.get(&r.class_label).unwrap_or(&r.class_label);
            let idx = class_names
                .iter()
                .position(|c| c == label)
                .ok_or_else(|| CnnError::ClassMismatch(format!("label '{label}' is not one of {class_names:?}")))?;
            images.push(load_image(root.join(&r.image_path))?);
            labels.push(idx);
            paths.push(r.image_path.clone());
        }
        Ok(Self { images, labels, class_names: class_names.to_vec(), paths })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.class_names.len()];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            images: idx.iter().map(|&i| self.images[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            paths: idx.iter().map(|&i| self.paths[i].clone()).collect(),
        }
    }
}

/// Per-image augmentation. Set a field to zero to disable that transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip_prob: f64,
    /// Integer translation drawn from `[-max_shift, max_shift]` per axis.
    pub max_shift: usize,
    /// Intensity shift drawn from `[-brightness, brightness]`.
    pub brightness: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip_prob: 0.5, max_shift: 4, brightness: 10.0 }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        Self { flip_prob: 0.0, max_shift: 0, brightness: 0.0 }
    }
}

/// Mirrors every `w`-wide row in place.
pub fn flip_horizontal(plane: &mut [f64], w: usize) {
    for row in plane.chunks_mut(w) {
        row.reverse();
    }
}

/// Flip, brightness shift (clamped to `[0, 255]`) and zero-filled
/// translation, drawn independently for every image of an `(n, 1, h, w)`
/// batch of intensities.
pub fn augment(batch: &Tensor, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Tensor, CnnError> {
    let (n, c, h, w) = batch.dims4()?;
    let plane = c * h * w;
    let mut out = batch.clone();
    let s = cfg.max_shift as i64;
    for i in 0..n {
        let flip = rng.bernoulli(cfg.flip_prob);
        let dx = rng.range_inclusive(-s, s);
        let dy = rng.range_inclusive(-s, s);
        let b = rng.uniform(-cfg.brightness, cfg.brightness);
        let img = &mut out.data_mut()[i * plane..(i + 1) * plane];
        for ch in img.chunks_mut(h * w) {
            if flip {
                flip_horizontal(ch, w);
            }
            if b != 0.0 {
                ch.iter_mut().for_each(|v| *v = (*v + b).clamp(0.0, 255.0));
            }
            if dx != 0 || dy != 0 {
                let src = ch.to_vec();
                for y in 0..h as i64 {
                    for x in 0..w as i64 {
                        let (sx, sy) = (x - dx, y - dy);
                        let inside = sx >= 0 && sy >= 0 && sx < w as i64 && sy < h as i64;
                        ch[(y * w as i64 + x) as usize] = if inside { src[(sy * w as i64 + sx) as usize] } else { 0.0 };
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-accuracy gain before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub augment: AugmentConfig,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            val_fraction: 0.2,
            augment: AugmentConfig::default(),
            repetitions: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CnnError> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(CnnError::Config("val_fraction must lie in (0, 1)".into()));
        }
        if self.patience < 1 || self.batch_size < 2 || self.max_epochs < 1 {
            return Err(CnnError::Config("patience and max_epochs must be >= 1, batch_size >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
}

/// `epoch,train_loss,val_accuracy` rows with a header.
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,val_accuracy\n");
    for r in history {
        s.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_accuracy));
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the best validation epoch (the latest one on ties).
    pub model: Network,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
}

/// Seeded per-class split: each class gives `round(fraction * n)` samples
/// to validation, keeping at least one for training.
pub fn stratified_split(labels: &[usize], classes: usize, fraction: f64, rng: &mut Rng) -> (Vec<usize>, Vec<usize>) {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        rng.shuffle(&mut idx);
        let k = ((fraction * idx.len() as f64).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

fn check_data(spec: &ModelSpec, data: &Dataset) -> Result<(), CnnError> {
    if data.is_empty() {
        return Err(CnnError::EmptyDataset);
    }
    if data.class_names.len() != spec.num_classes() {
        return Err(CnnError::ClassMismatch(format!(
            "model has {} classes, data has {}",
            spec.num_classes(),
            data.class_names.len()
        )));
    }
    let s = spec.input_size;
    if let Some(img) = data.images.iter().find(|i| i.dims() != (s, s)) {
        return Err(CnnError::InputSize { expected: s, width: img.width(), height: img.height() });
    }
    Ok(())
}

/// Class probabilities for every image, in batches.
pub fn predict_all(model: &Network, data: &Dataset) -> Result<Vec<Vec<f64>>, CnnError> {
    let k = model.spec().num_classes();
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.images.chunks(64) {
        let refs: Vec<&GrayImage> = chunk.iter().collect();
        let p = model.predict_batch(&model.batch(&refs)?)?;
        out.extend(p.data().chunks(k).map(|r| r.to_vec()));
    }
    Ok(out)
}

pub fn evaluate(model: &Network, test: &Dataset) -> Result<Metrics, CnnError> {
    check_data(model.spec(), test)?;
    let probs = predict_all(model, test)?;
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    Metrics::from_predictions(&test.labels, &pred, model.spec().num_classes())
}

fn accuracy(model: &Network, data: &Dataset) -> Result<f64, CnnError> {
    Ok(evaluate(model, data)?.accuracy)
}

/// Mini-batch Adam with augmentation and early stopping on validation
/// accuracy.
pub fn train(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, CnnError> {
    spec.validate()?;
    cfg.validate()?;
    check_data(spec, data)?;
    if data.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(CnnError::SingleClass);
    }
    let root = Rng::new(cfg.seed);
    let (train_idx, val_idx) = stratified_split(&data.labels, spec.num_classes(), cfg.val_fraction, &mut root.split(0));
    let val = data.subset(&val_idx);
    let mut net = Network::init(spec, &mut root.split(1))?;
    let mut rng = root.split(2);
    let mut adam = AdamState::new(net.params());

    let mut history = Vec::new();
    let mut best: Option<(Network, usize, f64)> = None;
    let mut stale = 0;
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.max_epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            // Batch norm needs two samples; a lone remainder is skipped.
            if chunk.len() < 2 {
                continue;
            }
            let imgs: Vec<&GrayImage> = chunk.iter().map(|&i| &data.images[i]).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
            let x = augment(&net.batch(&imgs)?, &cfg.augment, &mut rng)?;
            let (logits, cache) = net.forward(&x, BnMode::Train)?;
            let (loss, dlogits) = cross_entropy(&logits, &labels)?;
            let grads = net.backward(&cache.expect("training cache"), &dlogits)?;
            adam_step(net.params_mut(), &grads, &mut adam, &cfg.adam);
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let val_accuracy = if val.is_empty() { 0.0 } else { accuracy(&net, &val)? };
        history.push(EpochRecord { epoch, train_loss: loss_sum / seen.max(1) as f64, val_accuracy });
        match &best {
            Some((_, _, b)) if val_accuracy < *b => stale += 1,
            Some((_, _, b)) if val_accuracy == *b => {
                stale += 1;
                best = Some((net.clone(), epoch, val_accuracy));
            }
            _ => {
                stale = 0;
                best = Some((net.clone(), epoch, val_accuracy));
            }
        }
        if stale >= cfg.patience {
            break;
        }
    }
    let (model, best_epoch, best_val_accuracy) = best.expect("at least one epoch");
    Ok(TrainOutcome { model, history, best_epoch, best_val_accuracy })
}

/// Seed of repetition `i` under `seed`.
pub fn repetition_seed(seed: u64, i: usize) -> u64 {
    Rng::new(seed).split(i as u64).seed()
}

/// Runs `run(i, seed_i)` for `repetitions` independent seeds and summarises
/// the resulting metrics.
pub fn repeat_with(
    repetitions: usize,
    seed: u64,
    f1: F1Kind,
    mut run: impl FnMut(usize, u64) -> Result<Metrics, CnnError>,
) -> Result<(RepetitionSummary, Vec<Metrics>), CnnError> {
    if repetitions < 2 {
        return Err(CnnError::Repetitions(repetitions));
    }
    let runs = (0..repetitions).map(|i| run(i, repetition_seed(seed, i))).collect::<Result<Vec<_>, _>>()?;
    Ok((summarize_repetitions(&runs, f1)?, runs))
}

/// Trains `cfg.repetitions` models with independent initialisation and
/// split seeds and evaluates each on `test`.
pub fn repeat_experiment(
    spec: &ModelSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    f1: F1Kind,
) -> Result<(RepetitionSummary, Vec<Metrics>), CnnError> {
    repeat_with(cfg.repetitions, cfg.seed, f1, |_, seed| {
        let out = train(spec, train_set, &TrainConfig { seed, ..*cfg })?;
        evaluate(&out.model, test_set)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, seed: u64) -> Dataset {
        let mut rng = Rng::new(seed);
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let filled = i % 2 == 0;
            let (x0, y0) = (rng.below(40) as usize, rng.below(40) as usize);
            let img = GrayImage::from_fn(64, 64, |x, y| {
                let inside = (x0..x0 + 20).contains(&x) && (y0..y0 + 20).contains(&y);
                if filled && inside { 200 } else { 30 }
            });
            images.push(img);
            labels.push(filled as usize);
        }
        Dataset::new(images, labels, vec!["empty".into(), "filled".into()]).unwrap()
    }

    fn small_spec() -> ModelSpec {
        ModelSpec { input_size: 64, conv_channels: vec![4, 4, 8, 8, 8, 8], dense_hidden: 16, class_names: vec!["empty".into(), "filled".into()] }
    }

    #[test]
    fn augment_off_is_identity() {
        let x = Tensor::from_fn(&[3, 1, 6, 6], |i| (i % 251) as f64);
        let y = augment(&x, &AugmentConfig::off(), &mut Rng::new(4)).unwrap();
        assert_eq!(x, y);
        let z = augment(&x, &AugmentConfig::default(), &mut Rng::new(4)).unwrap();
        assert_eq!(z.shape(), x.shape());
        assert_eq!(z, augment(&x, &AugmentConfig::default(), &mut Rng::new(4)).unwrap());
    }

    #[test]
    fn flip_is_an_involution() {
        let orig: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let mut p = orig.clone();
        flip_horizontal(&mut p, 5);
        assert_ne!(p, orig);
        flip_horizontal(&mut p, 5);
        assert_eq!(p, orig);
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<usize> = (0..100).map(|i| (i % 10 < 7) as usize).collect();
        let (tr, va) = stratified_split(&labels, 2, 0.2, &mut Rng::new(1));
        assert_eq!(tr.len() + va.len(), 100);
        assert_eq!(va.iter().filter(|&&i| labels[i] == 1).count(), 14);
        assert_eq!(va.iter().filter(|&&i| labels[i] == 0).count(), 6);
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let data = toy(200, 3);
        let cfg = TrainConfig { max_epochs: 10, patience: 10, augment: AugmentConfig::off(), seed: 5, ..Default::default() };
        let out = train(&small_spec(), &data, &cfg).unwrap();
        assert_eq!(out.best_val_accuracy, 1.0);
        assert!(out.history.len() <= 10);
    }

    #[test]
    fn constant_accuracy_stops_after_two_epochs() {
        // Zero learning rate: validation accuracy never changes.
        let data = toy(20, 1);
        let cfg = TrainConfig {
            adam: AdamConfig { lr: 0.0, ..Default::default() },
            patience: 1,
            augment: AugmentConfig::off(),
            ..Default::default()
        };
        let out = train(&small_spec(), &data, &cfg).unwrap();
        assert_eq!(out.history.len(), 2);
    }

    #[test]
    fn single_class_rejected() {
        let mut data = toy(10, 1);
        data.labels.iter_mut().for_each(|l| *l = 0);
        assert!(matches!(train(&small_spec(), &data, &TrainConfig::default()), Err(CnnError::SingleClass)));
    }

    #[test]
    fn history_csv_has_header() {
        let csv = history_csv(&[EpochRecord { epoch: 1, train_loss: 0.5, val_accuracy: 0.75 }]);
        assert_eq!(csv, "epoch,train_loss,val_accuracy\n1,0.5,0.75\n");
    }
}
