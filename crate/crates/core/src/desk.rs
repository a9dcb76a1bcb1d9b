//! Desk-scale experiment recipes: a small family of part geometries,
//! 64 x 64 canvases and defect templates sized for them. The acceptance
//! suite, the CLI demo configs and the guide all build on these.

use crate::fixtures;
use crate::rng::Rng;
use crate::slicer::{slice_job, SliceError, SliceStack, TriMesh};
use crate::synth::{
    random_plan, CanvasOptions, DefectClass, DefectSpec, DefectTemplate, Interval, PlanConfig, SynthError,
};

/// Canvas side in pixels; a multiple of 64 as the classifier requires.
pub const DESK_SIZE: usize = 64;

/// Layers per desk job.
pub const DESK_LAYERS: usize = 40;

pub fn desk_canvas() -> CanvasOptions {
    CanvasOptions { width: DESK_SIZE, height: DESK_SIZE, scale: 2.0 }
}

/// Part shapes, roughly 14 to 24 mm across so they fill about half of a
/// desk canvas.
pub fn desk_meshes() -> Vec<(&'static str, TriMesh)> {
    let mk = |t| TriMesh::new(t).expect("fixture mesh is valid");
    vec![
        ("cube", mk(fixtures::cube_triangles(18.0))),
        ("slab", mk(fixtures::box_triangles(24.0, 12.0, 8.0))),
        ("cylinder", mk(fixtures::cylinder_triangles(10.0, 16.0, 24))),
        ("tube", mk(fixtures::tube_triangles(11.0, 6.0, 16.0, 24))),
        ("sphere", mk(fixtures::uv_sphere_triangles(9.0, 24, 16))),
        ("torus", mk(fixtures::torus_triangles(8.0, 3.5, 28, 14))),
    ]
}

/// One slice stack of [`DESK_LAYERS`] layers per mesh.
pub fn desk_stacks() -> Result<Vec<SliceStack>, SliceError> {
    desk_meshes()
        .into_iter()
        .map(|(_, m)| {
            let b = m.bounds();
            slice_job(&m, (b.max[2] - b.min[2]) / DESK_LAYERS as f64)
        })
        .collect()
}

fn template(class: DefectClass, offset: Interval, size: Interval) -> DefectTemplate {
    DefectTemplate { class, offset, size, density: Interval::new(0.04, 0.1) }
}

/// The four quality defects at desk scale.
pub fn quality_plan() -> PlanConfig {
    PlanConfig {
        templates: vec![
            template(DefectClass::Agglomerate, Interval::new(50.0, 90.0), Interval::new(8.0, 18.0)),
            template(DefectClass::ForeignObject, Interval::new(-90.0, -50.0), Interval::new(6.0, 14.0)),
            template(DefectClass::Porous, Interval::new(50.0, 90.0), Interval::point(0.0)),
            template(DefectClass::Striation, Interval::new(35.0, 70.0), Interval::new(2.0, 4.0)),
        ],
        run_length: [3, 8],
        gap_length: [2, 6],
    }
}

/// Occluded acquisitions only.
pub fn occlusion_plan() -> PlanConfig {
    PlanConfig {
        templates: vec![template(DefectClass::Occluded, Interval::point(0.0), Interval::new(0.6, 0.95))],
        run_length: [3, 8],
        gap_length: [5, 12],
    }
}

/// Striation on every layer of the job.
pub fn striation_only(layers: usize, rng: &mut Rng) -> Vec<DefectSpec> {
    let t = &quality_plan().templates[3];
    let offset = rng.uniform(t.offset.lo, t.offset.hi);
    vec![DefectSpec::new(DefectClass::Striation, crate::synth::LayerRange::new(0, layers - 1), offset).with_size(t.size)]
}

/// `count` jobs cycling through the desk stacks, each with a random plan.
pub fn desk_jobs(
    count: usize,
    plan: &PlanConfig,
    seed: u64,
) -> Result<Vec<(SliceStack, Vec<DefectSpec>)>, SynthError> {
    let stacks = desk_stacks().map_err(|e| SynthError::Config(e.to_string()))?;
    let mut rng = Rng::new(seed);
    Ok((0..count)
        .map(|i| {
            let s = stacks[i % stacks.len()].clone();
            let p = random_plan(s.len(), plan, &mut rng);
            (s, p)
        })
        .collect())
}
