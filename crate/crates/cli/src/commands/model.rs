use std::collections::BTreeMap;
use std::path::Path;

use layerscope::cnn::{self, history_csv, repeat_experiment, CnnError, F1Kind, ModelSpec, Network, TrainConfig};
use layerscope::image::load_image;
use layerscope::synth::DatasetManifest;
use layerscope::GrayImage;
use serde_json::json;

use super::{file_name, list_pgms};
use crate::config::{Context, TrainSection};
use crate::report::{confusion_csv, read_probabilities, summarize_probabilities, write_probabilities, ProbRow, RunReport};
use crate::CliError;

fn load_manifest(ctx: &Context, dir: &Path) -> Result<(std::path::PathBuf, DatasetManifest), CliError> {
    let dir = ctx.existing(dir)?;
    let path = dir.join("manifest.jsonl");
    if !path.is_file() {
        return Err(CliError::Missing(path));
    }
    Ok((dir, DatasetManifest::read(&path)?))
}

fn labelled_set(
    ctx: &Context,
    dir: &Path,
    classes: &[String],
    label_map: &BTreeMap<String, String>,
) -> Result<cnn::Dataset, CliError> {
    let (root, manifest) = load_manifest(ctx, dir)?;
    Ok(cnn::Dataset::from_manifest(&manifest, &root, classes, label_map)?)
}

/// Training set and model spec described by a train section.
fn training_setup(ctx: &Context, s: &TrainSection) -> Result<(cnn::Dataset, ModelSpec), CliError> {
    let data = labelled_set(ctx, &s.dataset, &s.classes, &s.label_map)?;
    let first = data.images.first().ok_or(CnnError::EmptyDataset)?;
    let mut spec = ModelSpec::new(s.input_size.unwrap_or(first.width()), s.classes.clone());
    if let Some(c) = &s.conv_channels {
        spec.conv_channels = c.clone();
    }
    if let Some(h) = s.dense_hidden {
        spec.dense_hidden = h;
    }
    spec.validate()?;
    Ok((data, spec))
}

fn train_counts(report: &mut RunReport, prefix: &str, data: &cnn::Dataset) {
    report.dataset_sizes.insert(prefix.into(), data.len());
    for (name, n) in data.class_names.iter().zip(data.class_counts()) {
        report.dataset_sizes.insert(format!("{prefix}.{name}"), n);
    }
}

pub fn train(ctx: &Context) -> Result<RunReport, CliError> {
    let s = ctx.section(&ctx.config.train, "train")?;
    let mut report = RunReport::new("train", ctx);
    let (data, spec) = report.time("load", || training_setup(ctx, s))?;
    let cfg = TrainConfig { seed: ctx.seed, ..s.train };
    let outcome = report.time("train", || cnn::train(&spec, &data, &cfg))?;

    let model_path = ctx.output(&s.output);
    let history_path = ctx.output(&s.history);
    for p in [&model_path, &history_path] {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
    }
    outcome.model.save(&model_path)?;
    std::fs::write(&history_path, history_csv(&outcome.history)).map_err(CliError::io(&history_path))?;

    train_counts(&mut report, "train", &data);
    report.metrics = json!({
        "spec": spec,
        "best_epoch": outcome.best_epoch,
        "best_val_accuracy": outcome.best_val_accuracy,
        "epochs": outcome.history.len(),
        "final_train_loss": outcome.history.last().map(|h| h.train_loss),
    });
    report.output(ctx, &model_path);
    report.output(ctx, &history_path);
    Ok(report)
}

fn predict(model: &Network, images: &[GrayImage]) -> Result<Vec<Vec<f64>>, CliError> {
    let k = model.spec().num_classes();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let refs: Vec<&GrayImage> = chunk.iter().collect();
        let p = model.predict_batch(&model.batch(&refs)?)?;
        out.extend(p.data().chunks(k).map(<[f64]>::to_vec));
    }
    Ok(out)
}

/// One probability row per image, in manifest or file-name order.
pub fn classify(ctx: &Context) -> Result<RunReport, CliError> {
    let s = ctx.section(&ctx.config.classify, "classify")?;
    let model_path = ctx.existing(&s.model)?;
    let mut report = RunReport::new("classify", ctx);
    let (paths, labels, images): (Vec<String>, Vec<Option<String>>, Vec<GrayImage>) = match (&s.dataset, &s.input) {
        (Some(d), None) => {
            let (root, manifest) = load_manifest(ctx, d)?;
            report.time("load", || -> Result<_, CliError> {
                let mut images = Vec::with_capacity(manifest.len());
                for r in &manifest.records {
                    images.push(load_image(root.join(&r.image_path))?);
                }
                let labels = manifest
                    .records
                    .iter()
                    .map(|r| Some(s.label_map.get(&r.class_label).unwrap_or(&r.class_label).clone()))
                    .collect();
                Ok((manifest.records.iter().map(|r| r.image_path.clone()).collect(), labels, images))
            })?
        }
        (None, Some(dir)) => {
            let files = list_pgms(&ctx.existing(dir)?)?;
            let images = report.time("load", || files.iter().map(load_image).collect::<Result<Vec<_>, _>>())?;
            (files.iter().map(|f| file_name(f)).collect(), vec![None; files.len()], images)
        }
        _ => return Err(CliError::Config("classify needs exactly one of \"dataset\" and \"input\"".into())),
    };
    let model = Network::load(&model_path)?;
    let classes = model.spec().class_names.clone();
    if let Some(l) = labels.iter().flatten().find(|l| !classes.contains(l)) {
        return Err(CnnError::ClassMismatch(format!("dataset label \"{l}\" is not a model class {classes:?}")).into());
    }
    let probs = report.time("classify", || predict(&model, &images))?;
    let rows: Vec<ProbRow> = paths
        .into_iter()
        .zip(labels)
        .zip(probs)
        .map(|((path, label), probs)| ProbRow { path, label, probs })
        .collect();

    let out = ctx.output(&s.output);
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    write_probabilities(&out, &classes, &rows)?;
    let summary = summarize_probabilities(&classes, &rows)?;
    report.dataset_sizes.insert("images".into(), rows.len());
    report.metrics = json!({ "accuracy": summary.metrics.as_ref().map(|m| m.accuracy) });
    report.output(ctx, &out);
    Ok(report)
}

/// Mean class probabilities per true class, the normalised confusion and,
/// with more than one repetition, Student-t intervals over retrained models.
pub fn report(ctx: &Context) -> Result<RunReport, CliError> {
    let s = ctx.section(&ctx.config.report, "report")?;
    let table = ctx.existing(&s.probabilities)?;
    let repetitions = ctx.repetitions.unwrap_or(s.repetitions);
    let mut report = RunReport::new("report", ctx);
    let (classes, rows) = report.time("load", || read_probabilities(&table))?;
    let summary = summarize_probabilities(&classes, &rows)?;
    let f1 = match &s.positive_class {
        Some(c) => F1Kind::Binary(
            classes.iter().position(|k| k == c).ok_or_else(|| CliError::Config(format!("positive class \"{c}\" not in {classes:?}")))?,
        ),
        None => F1Kind::Macro,
    };
    report.dataset_sizes.insert("rows".into(), rows.len());

    let mut metrics = json!({
        "classes": classes,
        "mean_probabilities": summary.mean_probabilities,
        "f1_kind": f1,
        "f1": summary.metrics.as_ref().map(|m| f1.of(m)),
        "metrics": summary.metrics,
    });
    if let Some(m) = &summary.metrics {
        let out = ctx.output(&s.output).with_file_name("confusion.csv");
        if let Some(dir) = out.parent() {
            std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
        }
        std::fs::write(&out, confusion_csv(&classes, &m.normalized_confusion)).map_err(CliError::io(&out))?;
        report.output(ctx, &out);
    }

    if repetitions > 1 {
        let t = ctx.section(&ctx.config.train, "train")?;
        let test_dir = s
            .test_dataset
            .as_ref()
            .ok_or_else(|| CliError::Config("repetitions > 1 needs report.test_dataset".into()))?;
        if t.classes != classes {
            return Err(CnnError::ClassMismatch(format!("train classes {:?} vs table classes {classes:?}", t.classes)).into());
        }
        let (train_set, spec) = report.time("load", || training_setup(ctx, t))?;
        let test_set = report.time("load", || labelled_set(ctx, test_dir, &t.classes, &t.label_map))?;
        let cfg = TrainConfig { seed: ctx.seed, repetitions, ..t.train };
        let (rep, _) = report.time("repetitions", || repeat_experiment(&spec, &train_set, &test_set, &cfg, f1))?;
        train_counts(&mut report, "train", &train_set);
        train_counts(&mut report, "test", &test_set);
        report.seeds.extend((0..repetitions).map(|i| (format!("repetition_{i}"), cnn::repetition_seed(ctx.seed, i))));
        metrics["repetitions"] = json!(rep);
    }
    report.metrics = metrics;
    Ok(report)
}
