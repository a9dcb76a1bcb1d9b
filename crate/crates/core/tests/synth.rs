use std::collections::BTreeSet;

use layerscope::desk::{desk_canvas, desk_jobs, desk_stacks, quality_plan, DESK_LAYERS};
use layerscope::fixtures::cube_triangles;
use layerscope::image::load_image;
use layerscope::rng::Rng;
use layerscope::slicer::{emit_layer_svg, slice_job, TriMesh};
use layerscope::synth::raster::read_layer_svg;
use layerscope::synth::{
    generate_dataset, generate_dataset_with_targets, generate_job, inject_defect, rasterize_layer, DatasetManifest,
    DefectClass, DefectSpec, Interval, LayerParams, LayerRange, RandomisationConfig, SynthError,
};
use layerscope::GrayImage;

fn tall_cube() -> layerscope::slicer::SliceStack {
    slice_job(&TriMesh::new(cube_triangles(20.0)).unwrap(), 0.1).unwrap()
}

#[test]
fn same_seed_same_bytes() {
    let stacks = desk_stacks().unwrap();
    let plan = vec![DefectSpec::new(DefectClass::Agglomerate, LayerRange::new(4, 9), 60.0)];
    let a = generate_job(&stacks[0], &RandomisationConfig::default(), 17, &plan, &desk_canvas(), 3).unwrap();
    let b = generate_job(&stacks[0], &RandomisationConfig::default(), 17, &plan, &desk_canvas(), 3).unwrap();
    assert_eq!(a, b);
    let c = generate_job(&stacks[0], &RandomisationConfig::default(), 18, &plan, &desk_canvas(), 3).unwrap();
    assert_ne!(a.images, c.images);
    assert!(a.records.iter().all(|r| r.image_path.starts_with("job_0003/")));
}

#[test]
fn striation_range_labels_exactly_those_layers() {
    let stack = tall_cube();
    assert!(stack.len() > 120);
    let plan = vec![DefectSpec::new(DefectClass::Striation, LayerRange::new(100, 120), 40.0)];
    let canvas = layerscope::synth::CanvasOptions { width: 64, height: 64, scale: 2.0 };
    let out = generate_job(&stack, &RandomisationConfig::default(), 1, &plan, &canvas, 0).unwrap();
    let striated: Vec<usize> = out.records.iter().filter(|r| r.class_label == "striation").map(|r| r.layer_index).collect();
    assert_eq!(striated, (100..=120).collect::<Vec<_>>());

    let empty = generate_job(&stack, &RandomisationConfig::default(), 1, &[], &canvas, 0).unwrap();
    assert!(empty.records.iter().all(|r| r.class_label == "good" && r.defect_params.is_none()));
}

#[test]
fn sample_log_stays_inside_intervals() {
    let stacks = desk_stacks().unwrap();
    let cfg = RandomisationConfig::default();
    let wide = cfg.widened(0.2);
    for (i, s) in stacks.iter().enumerate() {
        for (c, tag) in [(cfg, "default"), (wide, "widened")] {
            let out = generate_job(s, &c, 40 + i as u64, &[], &desk_canvas(), i).unwrap();
            assert_eq!(out.sample_log.len(), DESK_LAYERS);
            assert!(out.sample_log.iter().all(|p| p.within(&c)), "{tag} stack {i}");
            // Jobwise parameters do not change between layers.
            let bg: BTreeSet<u64> = out.sample_log.iter().map(|p| p.bg.to_bits()).collect();
            assert_eq!(bg.len(), 1);
        }
    }
}

#[test]
fn pixels_outside_defect_masks_are_untouched() {
    let mut rng = Rng::new(5);
    let base = GrayImage::from_fn(64, 64, |x, y| (60 + (x + 2 * y) % 50) as u8);
    let part: Vec<bool> = (0..64 * 64).map(|i| (i % 64) > 16 && (i % 64) < 48 && i / 64 > 16 && i / 64 < 48).collect();
    for class in [DefectClass::Striation, DefectClass::ForeignObject, DefectClass::Agglomerate, DefectClass::Porous, DefectClass::Occluded] {
        for _ in 0..10 {
            let spec = DefectSpec::new(class, LayerRange::new(0, 0), rng.uniform(30.0, 90.0));
            let (img, mask, _) = inject_defect(&base, &spec, Some(&part), &mut rng).unwrap();
            assert!(mask.iter().any(|&m| m), "{class:?} drew an empty mask");
            for (i, &m) in mask.iter().enumerate() {
                if !m {
                    assert_eq!(img.pixels()[i], base.pixels()[i], "{class:?}");
                }
            }
        }
    }
}

#[test]
fn flat_render_has_two_levels() {
    let stack = desk_stacks().unwrap().remove(3);
    let canvas = desk_canvas();
    let mut rng = Rng::new(0);
    for layer in &stack.layers {
        let shifted: Vec<_> = layer.contours.iter().map(|c| c.translated(16.0, 16.0)).collect();
        let r = rasterize_layer(&shifted, &LayerParams::flat(35.0, 180.0), None, (canvas.width, canvas.height), canvas.scale, &mut rng)
            .unwrap();
        let levels: BTreeSet<u8> = r.image.pixels().iter().copied().collect();
        assert!(levels.len() <= 2 && levels.iter().all(|&v| v == 35 || v == 180), "{levels:?}");
    }
}

#[test]
fn desk_dataset_is_balanced() {
    let jobs = desk_jobs(12, &quality_plan(), 3).unwrap();
    let d = generate_dataset(&jobs, &RandomisationConfig::default(), 9, 10, &desk_canvas()).unwrap();
    assert_eq!(d.manifest.len(), 50);
    assert_eq!(d.images.len(), 50);
    for c in DefectClass::QUALITY {
        assert_eq!(d.manifest.class_counts[c.label()], 10, "{c:?}");
    }
    // Records keep job and layer order.
    let keys: Vec<(usize, usize)> = d.manifest.records.iter().map(|r| (r.job_id, r.layer_index)).collect();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    assert_eq!(keys, sorted);
    let again = generate_dataset(&jobs, &RandomisationConfig::default(), 9, 10, &desk_canvas()).unwrap();
    assert_eq!(d, again);
}

#[test]
fn generation_failures() {
    let stacks = desk_stacks().unwrap();
    let single = vec![(stacks[0].clone(), vec![DefectSpec::new(DefectClass::Striation, LayerRange::new(0, 4), 50.0)])];
    assert!(matches!(
        generate_dataset(&single, &RandomisationConfig::default(), 1, 1, &desk_canvas()),
        Err(SynthError::InsufficientClass { .. })
    ));
    let too_far = [DefectSpec::new(DefectClass::Porous, LayerRange::new(30, DESK_LAYERS), 50.0)];
    assert!(matches!(
        generate_job(&stacks[0], &RandomisationConfig::default(), 1, &too_far, &desk_canvas(), 0),
        Err(SynthError::LayerOutOfRange { .. })
    ));
    let overlap = [
        DefectSpec::new(DefectClass::Porous, LayerRange::new(2, 6), 50.0),
        DefectSpec::new(DefectClass::Striation, LayerRange::new(6, 8), 50.0),
    ];
    assert!(matches!(
        generate_job(&stacks[0], &RandomisationConfig::default(), 1, &overlap, &desk_canvas(), 0),
        Err(SynthError::OverlappingDefects(6))
    ));
    let mut bad = RandomisationConfig::default();
    bad.translucency_alpha = Interval::new(0.5, 1.5);
    assert!(generate_job(&stacks[0], &bad, 1, &[], &desk_canvas(), 0).is_err());
}

#[test]
fn written_dataset_reads_back() {
    let jobs = desk_jobs(6, &quality_plan(), 4).unwrap();
    let targets = [(DefectClass::Good, 6), (DefectClass::Striation, 3)];
    let d = generate_dataset_with_targets(&jobs, &RandomisationConfig::default(), 2, &targets, &desk_canvas()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = d.write(dir.path()).unwrap();
    let back = DatasetManifest::read(&path).unwrap();
    assert_eq!(back, d.manifest);
    assert_eq!(DatasetManifest::from_jsonl(&d.manifest.to_jsonl()).unwrap(), d.manifest);
    for (p, img) in back.image_paths(dir.path()).iter().zip(&d.images) {
        assert_eq!(&load_image(p).unwrap(), img);
    }
}

#[test]
fn svg_layers_render_like_slices() {
    let stack = desk_stacks().unwrap().remove(0);
    let canvas = desk_canvas();
    let layer = &stack.layers[10];
    let svg = emit_layer_svg(layer, &stack.bounds, 10.0);
    let from_svg = read_layer_svg(&svg).unwrap().contours_mm();
    let p = LayerParams::flat(30.0, 200.0);
    let shift = |cs: &[layerscope::slicer::Contour]| cs.iter().map(|c| c.translated(14.0, 14.0)).collect::<Vec<_>>();
    let dims = (canvas.width, canvas.height);
    let a = rasterize_layer(&shift(&layer.contours), &p, None, dims, canvas.scale, &mut Rng::new(0)).unwrap();
    let b = rasterize_layer(&shift(&from_svg), &p, None, dims, canvas.scale, &mut Rng::new(0)).unwrap();
    assert_eq!(a.image, b.image);
}
