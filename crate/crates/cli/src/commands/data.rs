use layerscope::desk::desk_meshes;
use layerscope::rng::Rng;
use layerscope::slicer::{read_stl, slice_job, write_stack, SliceStack, TriMesh};
use layerscope::synth::{generate_dataset_with_targets, random_plan, DefectClass};
use serde_json::json;

use super::file_name;
use crate::config::Context;
use crate::report::{sha256_hex, RunReport};
use crate::CliError;

pub fn slice(ctx: &Context) -> Result<RunReport, CliError> {
    let s = ctx.section(&ctx.config.slice, "slice")?;
    let mesh_path = ctx.existing(&s.mesh)?;
    if !(s.scale > 0.0) {
        return Err(CliError::Config(format!("scale must be > 0, got {}", s.scale)));
    }
    let mut report = RunReport::new("slice", ctx);
    let mesh = read_stl(&mesh_path)?;
    let stack = report.time("slice", || slice_job(&mesh, s.layer_height))?;
    let out = ctx.output(&s.output);
    let index = write_stack(&stack, s.scale, &out)?;
    if mesh.dropped_degenerate() > 0 {
        report.warnings.push(format!("dropped {} degenerate triangles", mesh.dropped_degenerate()));
    }
    report.dataset_sizes.insert("triangles".into(), mesh.triangles().len());
    report.dataset_sizes.insert("layers".into(), index.z_values.len());
    report.metrics = json!({
        "bounds": { "min": stack.bounds.min, "max": stack.bounds.max },
        "layer_height": index.layer_height,
        "contours": stack.layers.iter().map(|l| l.contours.len()).sum::<usize>(),
    });
    report.output(ctx, &out);
    Ok(report)
}

fn job_stack(name: &str, mesh: &TriMesh, layers: usize) -> Result<SliceStack, CliError> {
    let b = mesh.bounds();
    let stack = slice_job(mesh, (b.max[2] - b.min[2]) / layers as f64)?;
    if stack.len() != layers {
        return Err(CliError::Config(format!("{name} sliced to {} layers instead of {layers}", stack.len())));
    }
    Ok(stack)
}

/// Slices the job meshes, draws a defect plan per job and writes a
/// class-balanced dataset with its manifest.
pub fn synth(ctx: &Context) -> Result<RunReport, CliError> {
    let s = ctx.section(&ctx.config.synth, "synth")?;
    if s.layers == 0 || s.jobs == 0 {
        return Err(CliError::Config("synth needs layers >= 1 and jobs >= 1".into()));
    }
    let mut meshes = Vec::new();
    for m in &s.meshes {
        let path = ctx.existing(m)?;
        meshes.push((file_name(&path), read_stl(&path)?));
    }
    let builtin = desk_meshes();
    for name in &s.builtin {
        let (_, mesh) = builtin
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| CliError::Config(format!("unknown built-in mesh \"{name}\"")))?;
        meshes.push((name.clone(), mesh.clone()));
    }
    if meshes.is_empty() {
        meshes = builtin.into_iter().map(|(n, m)| (n.to_string(), m)).collect();
    }
    let targets: Vec<(DefectClass, usize)> = if s.targets.is_empty() {
        DefectClass::QUALITY.iter().map(|&c| (c, s.per_class)).collect()
    } else {
        s.targets
            .iter()
            .map(|(label, &n)| {
                DefectClass::from_label(label)
                    .map(|c| (c, n))
                    .ok_or_else(|| CliError::Config(format!("unknown class \"{label}\" in targets")))
            })
            .collect::<Result<_, _>>()?
    };

    let mut report = RunReport::new("synth", ctx);
    let stacks = report.time("slice", || {
        meshes.iter().map(|(n, m)| job_stack(n, m, s.layers)).collect::<Result<Vec<_>, _>>()
    })?;
    let root = Rng::new(ctx.seed);
    let mut plan_rng = root.split(0);
    let dataset_seed = root.split(1).seed();
    let jobs: Vec<_> = (0..s.jobs)
        .map(|i| {
            let stack = stacks[i % stacks.len()].clone();
            let plan = random_plan(stack.len(), &s.plan, &mut plan_rng);
            (stack, plan)
        })
        .collect();
    let dataset = report.time("generate", || {
        generate_dataset_with_targets(&jobs, &s.randomisation, dataset_seed, &targets, &s.canvas)
    })?;
    let out = ctx.output(&s.output);
    let manifest_path = report.time("write", || dataset.write(&out))?;
    let manifest_bytes = std::fs::read(&manifest_path).map_err(CliError::io(&manifest_path))?;

    if dataset.clipped_layers > 0 {
        report.warnings.push(format!("{} rendered layers had contours clipped at the canvas edge", dataset.clipped_layers));
    }
    report.seeds.insert("plan".into(), root.split(0).seed());
    report.seeds.insert("dataset".into(), dataset_seed);
    report.dataset_sizes.insert("jobs".into(), s.jobs);
    report.dataset_sizes.insert("images".into(), dataset.manifest.len());
    report.metrics = json!({
        "class_counts": dataset.manifest.class_counts,
        "manifest_sha256": sha256_hex(&manifest_bytes),
        "meshes": meshes.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
    });
    report.output(ctx, &manifest_path);
    Ok(report)
}
