use layerscope::calib::{self, read_views, undistort_image, CalibFile, CalibOptions, CameraModel};
use layerscope::cnn::Network;
use layerscope::image::{crop_roi, decode_pgm, load_image, save_image, Rect};
use layerscope::registration::{apply_to_stack, ecc_align, WarpFile, WarpParams};
use layerscope::GrayImage;
use serde_json::json;

use super::{create_dir, file_name, list_pgms, read_json};
use crate::config::Context;
use crate::report::{write_json, RunReport};
use crate::CliError;

pub fn calibrate(ctx: &Context) -> Result<RunReport, CliError> {
    let s = ctx.section(&ctx.config.calibrate, "calibrate")?;
    let views_path = ctx.existing(&s.views)?;
    let mut report = RunReport::new("calibrate", ctx);
    let views = read_views(&views_path)?;
    let mut opts = CalibOptions { image_size: s.image_size.map(|[w, h]| (w, h)), ..Default::default() };
    if let Some(m) = s.max_iterations {
        opts.max_iterations = m;
    }
    let result = report.time("calibrate", || calib::calibrate(&views, &opts))?;
    let file = CalibFile::from(&result);
    let out = ctx.output(&s.output);
    write_json(&out, &file)?;
    report.output(ctx, &out);
    report.dataset_sizes.insert("views".into(), views.len());
    report.dataset_sizes.insert("points".into(), views.iter().map(|v| v.correspondences.len()).sum());
    report.metrics = json!({ "camera": file, "rms": result.rms, "iterations": result.iterations });
    Ok(report)
}

enum WarpSource {
    File(WarpParams),
    Reference(GrayImage),
}

/// Undistort, register, then crop every frame, keeping file names.
pub fn prepare(ctx: &Context) -> Result<RunReport, CliError> {
    let s = ctx.section(&ctx.config.prepare, "prepare")?;
    // Resolve and parse every side input before reading any frame.
    let input = ctx.existing(&s.input)?;
    let camera: CameraModel = read_json(&ctx.existing(&s.camera)?)?;
    let source = match (&s.warp, &s.reference) {
        (Some(w), None) => WarpSource::File(WarpParams::from(&read_json::<WarpFile>(&ctx.existing(w)?)?)),
        (None, Some(r)) => WarpSource::Reference(load_image(ctx.existing(r)?)?),
        _ => return Err(CliError::Config("prepare needs exactly one of \"warp\" and \"reference\"".into())),
    };
    let files = list_pgms(&input)?;
    let mut report = RunReport::new("prepare", ctx);
    let frames = report.time("load", || files.iter().map(load_image).collect::<Result<Vec<_>, _>>())?;
    if let Some(first) = frames.first() {
        if let Some((f, img)) = files.iter().zip(&frames).find(|(_, img)| img.dims() != first.dims()) {
            return Err(CliError::Config(format!("{} is {:?}, expected {:?}", f.display(), img.dims(), first.dims())));
        }
        let roi = s.roi.unwrap_or(Rect::full(first));
        if !roi.fits(first.width(), first.height()) {
            return Err(CliError::Config(format!("roi {roi:?} does not fit {:?} frames", first.dims())));
        }
    }

    let undistorted = report.time("undistort", || frames.iter().map(|f| undistort_image(f, &camera)).collect::<Vec<_>>());
    let out = ctx.output(&s.output);
    create_dir(&out)?;
    let warp = match source {
        WarpSource::File(w) => w,
        WarpSource::Reference(reference) => {
            let Some(layer) = undistorted.get(s.reference_layer) else {
                return Err(CliError::Config(format!(
                    "reference_layer {} but only {} frames",
                    s.reference_layer,
                    undistorted.len()
                )));
            };
            let init = WarpParams::identity(s.kind);
            let r = report.time("register", || ecc_align(&reference, layer, s.kind, &init, &s.ecc))?;
            report.metrics = json!({ "coefficient": r.coefficient, "level_coefficients": r.level_coefficients });
            let path = out.join("warp.json");
            write_json(&path, &WarpFile::from(&r.warp))?;
            report.output(ctx, &path);
            r.warp
        }
    };
    let aligned = report.time("warp", || apply_to_stack(&undistorted, &warp))?;
    report.time("crop", || -> Result<(), CliError> {
        for (f, img) in files.iter().zip(&aligned) {
            let roi = s.roi.unwrap_or(Rect::full(img));
            save_image(&crop_roi(img, roi)?, out.join(file_name(f)))?;
        }
        Ok(())
    })?;
    report.dataset_sizes.insert("frames".into(), files.len());
    let mut metrics = json!({ "warp": WarpFile::from(&warp), "roi": s.roi });
    if let (Some(m), serde_json::Value::Object(extra)) = (metrics.as_object_mut(), report.metrics.take()) {
        m.extend(extra);
    }
    report.metrics = metrics;
    report.output(ctx, &out);
    Ok(report)
}

/// Routes every image to `good/` or `bad/` by the Type 1 model's `P(bad)`.
pub fn clean(ctx: &Context) -> Result<RunReport, CliError> {
    let s = ctx.section(&ctx.config.clean, "clean")?;
    let input = ctx.existing(&s.input)?;
    let model_path = ctx.existing(&s.model)?;
    let threshold = ctx.threshold.unwrap_or(s.threshold);
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::Config(format!("threshold {threshold} outside [0, 1]")));
    }
    let model = Network::load(&model_path)?;
    let bad = model.spec().class_names.iter().position(|c| *c == s.bad_class).ok_or_else(|| {
        CliError::Config(format!("model classes {:?} do not include \"{}\"", model.spec().class_names, s.bad_class))
    })?;
    let files = list_pgms(&input)?;

    let out = ctx.output(&s.output);
    let mut report = RunReport::new("clean", ctx);
    for part in ["good", "bad"] {
        let dir = out.join(part);
        // Partitions are rebuilt from scratch so reruns stay exact.
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(CliError::io(&dir))?;
        }
        create_dir(&dir)?;
    }
    let (mut good, mut bad_count, mut skipped) = (0usize, 0usize, 0usize);
    let mut routed = Vec::new();
    for f in &files {
        let bytes = std::fs::read(f).map_err(CliError::io(f))?;
        let img = match decode_pgm(&bytes) {
            Ok(img) => img,
            Err(e) => {
                skipped += 1;
                report.warnings.push(format!("skipped {}: {e}", file_name(f)));
                continue;
            }
        };
        let p = report.time("classify", || model.predict(&img))?[bad];
        let part = if p >= threshold { "bad" } else { "good" };
        if part == "bad" {
            bad_count += 1;
        } else {
            good += 1;
        }
        let dest = out.join(part).join(file_name(f));
        std::fs::write(&dest, &bytes).map_err(CliError::io(&dest))?;
        routed.push(json!({ "file": file_name(f), "p_bad": p, "partition": part }));
    }
    let summary = json!({ "threshold": threshold, "good": good, "bad": bad_count, "skipped": skipped, "images": routed });
    let path = out.join("clean_summary.json");
    write_json(&path, &summary)?;
    report.output(ctx, &out.join("good"));
    report.output(ctx, &out.join("bad"));
    report.output(ctx, &path);
    report.dataset_sizes.insert("input".into(), files.len());
    report.metrics = json!({ "threshold": threshold, "good": good, "bad": bad_count, "skipped": skipped });
    Ok(report)
}
