use layerscope::fixtures::{moved_pair, textured_image};
use layerscope::registration::{
    apply_to_stack, corner_error, ecc_align, ecc_coefficient, register_job, EccOptions, RegistrationError, WarpKind,
    WarpParams,
};
use layerscope::rng::Rng;
use layerscope::GrayImage;

fn photometric(img: &GrayImage, gain: f64, bias: f64) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| (gain * img.get(x, y) as f64 + bias).round().clamp(0.0, 255.0) as u8)
}

fn align(tpl: &GrayImage, target: &GrayImage, kind: WarpKind) -> layerscope::registration::EccResult {
    ecc_align(tpl, target, kind, &WarpParams::identity(kind), &EccOptions::default()).unwrap()
}

#[test]
fn recovers_random_euclidean_motion() {
    let mut rng = Rng::new(21);
    for i in 0..6 {
        let truth = WarpParams::euclidean(rng.uniform(-5.0, 5.0).to_radians(), rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0));
        let (tpl, target) = moved_pair(128, 32, &truth, 300 + i);
        let r = align(&tpl, &target, WarpKind::Euclidean);
        let err = corner_error(&r.warp, &truth, 128, 128);
        assert!(err < 0.1, "case {i}: corner error {err}");
        assert!(r.coefficient > 0.99, "case {i}: rho {}", r.coefficient);
    }
}

#[test]
fn recovers_translation_and_affine() {
    let truth = WarpParams::translation(4.3, -6.7);
    let (tpl, target) = moved_pair(128, 32, &truth, 5);
    let r = align(&tpl, &target, WarpKind::Translation);
    assert!(corner_error(&r.warp, &truth, 128, 128) < 0.1);

    let truth = WarpParams::affine([[1.02, 0.03, 3.0], [-0.02, 0.98, -2.5]]);
    let (tpl, target) = moved_pair(128, 32, &truth, 6);
    let r = align(&tpl, &target, WarpKind::Affine);
    assert!(corner_error(&r.warp, &truth, 128, 128) < 0.1);
}

#[test]
fn photometric_change_does_not_move_the_estimate() {
    let truth = WarpParams::euclidean(0.04, -3.0, 5.0);
    let (tpl, target) = moved_pair(128, 32, &truth, 8);
    let plain = align(&tpl, &target, WarpKind::Euclidean);
    let dim = align(&tpl, &photometric(&target, 0.5, 40.0), WarpKind::Euclidean);
    assert!(corner_error(&plain.warp, &truth, 128, 128) < 0.1);
    assert!(corner_error(&dim.warp, &truth, 128, 128) < 0.1);

    // The coefficient itself is invariant up to quantisation.
    let a = textured_image(64, 64, 9);
    let rho = ecc_coefficient(&a, &photometric(&a, 0.5, 40.0)).unwrap();
    assert!(rho > 0.995, "rho {rho}");
}

#[test]
fn level_coefficients_never_decrease() {
    let mut rng = Rng::new(31);
    for i in 0..4 {
        let truth = WarpParams::euclidean(rng.uniform(-0.08, 0.08), rng.uniform(-8.0, 8.0), rng.uniform(-8.0, 8.0));
        let (tpl, target) = moved_pair(128, 32, &truth, 400 + i);
        let r = align(&tpl, &target, WarpKind::Euclidean);
        assert_eq!(r.level_coefficients.len(), EccOptions::default().pyramid_levels);
        for w in r.level_coefficients.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert_eq!(*r.level_coefficients.last().unwrap(), r.coefficient);
    }
}

#[test]
fn identical_images_give_identity() {
    let a = textured_image(96, 96, 12);
    let r = align(&a, &a, WarpKind::Affine);
    assert!(corner_error(&r.warp, &WarpParams::identity(WarpKind::Affine), 96, 96) < 1e-6);
    assert!(r.coefficient > 0.999_999);
}

#[test]
fn flat_or_mismatched_inputs_fail() {
    let a = textured_image(64, 64, 1);
    let flat = GrayImage::filled(64, 64, 90);
    assert!(matches!(
        ecc_align(&a, &flat, WarpKind::Euclidean, &WarpParams::identity(WarpKind::Euclidean), &EccOptions::default()),
        Err(RegistrationError::ZeroVariance)
    ));
    let small = textured_image(32, 64, 1);
    assert!(matches!(
        ecc_align(&a, &small, WarpKind::Euclidean, &WarpParams::identity(WarpKind::Euclidean), &EccOptions::default()),
        Err(RegistrationError::DimensionMismatch(..))
    ));
}

#[test]
fn one_warp_registers_the_whole_job() {
    let truth = WarpParams::euclidean(0.03, 5.0, -4.0);
    let layers: Vec<(GrayImage, GrayImage)> = (0..3).map(|k| moved_pair(128, 32, &truth, 50 + k)).collect();
    let stack: Vec<GrayImage> = layers.iter().map(|(_, t)| t.clone()).collect();
    let (aligned, r) = register_job(&layers[0].0, &stack[0], &stack, WarpKind::Euclidean, &EccOptions::default()).unwrap();
    assert_eq!(aligned.len(), stack.len());
    assert!(corner_error(&r.warp, &truth, 128, 128) < 0.1);
    for ((tpl, _), out) in layers.iter().zip(&aligned) {
        // Compare away from the border the motion leaves uncovered.
        let mut diff = 0.0;
        let mut n = 0.0;
        for y in 16..112 {
            for x in 16..112 {
                diff += (tpl.get(x, y) as f64 - out.get(x, y) as f64).abs();
                n += 1.0;
            }
        }
        assert!(diff / n < 2.0, "mean abs error {}", diff / n);
    }
    assert_eq!(apply_to_stack(&stack, &r.warp).unwrap(), aligned);
}

#[test]
fn warp_json_round_trip() {
    let w = WarpParams::euclidean(0.1, 2.0, -3.0);
    let text = serde_json::to_string(&w).unwrap();
    let back: WarpParams = serde_json::from_str(&text).unwrap();
    assert!(corner_error(&w, &back, 100, 100) < 1e-12);
    assert_eq!(back.kind(), WarpKind::Euclidean);
}
