//! Deterministic geometry and imagery used by tests, the guide and the demo
//! configurations. All meshes are closed and outward-oriented.

use std::f64::consts::{PI, TAU};

use crate::calib::{synth_checkerboard, CalibError, CalibView, CameraModel, Pose};
use crate::image::{crop_roi, gaussian_blur_f64, GrayImage, Rect};
use crate::registration::{warp_image, WarpParams};
use crate::rng::Rng;
use crate::slicer::{Point3, Triangle};

fn quad(a: Point3, b: Point3, c: Point3, d: Point3) -> [Triangle; 2] {
    [[a, b, c], [a, c, d]]
}

/// Axis-aligned box `[0, sx] x [0, sy] x [0, sz]`.
pub fn box_triangles(sx: f64, sy: f64, sz: f64) -> Vec<Triangle> {
    let p = |x: f64, y: f64, z: f64| [x * sx, y * sy, z * sz];
    let faces = [
        quad(p(0., 0., 0.), p(0., 1., 0.), p(1., 1., 0.), p(1., 0., 0.)), // z = 0
        quad(p(0., 0., 1.), p(1., 0., 1.), p(1., 1., 1.), p(0., 1., 1.)), // z = 1
        quad(p(0., 0., 0.), p(1., 0., 0.), p(1., 0., 1.), p(0., 0., 1.)), // y = 0
        quad(p(0., 1., 0.), p(0., 1., 1.), p(1., 1., 1.), p(1., 1., 0.)), // y = 1
        quad(p(0., 0., 0.), p(0., 0., 1.), p(0., 1., 1.), p(0., 1., 0.)), // x = 0
        quad(p(1., 0., 0.), p(1., 1., 0.), p(1., 1., 1.), p(1., 0., 1.)), // x = 1
    ];
    faces.iter().flatten().copied().collect()
}

pub fn cube_triangles(size: f64) -> Vec<Triangle> {
    box_triangles(size, size, size)
}

/// Tetrahedron on `(0,0,0), (1,0,0), (0,1,0), (0,0,1)`.
pub fn tetrahedron_triangles() -> Vec<Triangle> {
    let o = [0.0, 0.0, 0.0];
    let x = [1.0, 0.0, 0.0];
    let y = [0.0, 1.0, 0.0];
    let z = [0.0, 0.0, 1.0];
    vec![[o, y, x], [o, x, z], [o, z, y], [x, y, z]]
}

/// Regular octahedron with vertices on the unit axes.
pub fn octahedron_triangles() -> Vec<Triangle> {
    let ring = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
    let top = [0.0, 0.0, 1.0];
    let bottom = [0.0, 0.0, -1.0];
    let mut out = Vec::new();
    for i in 0..4 {
        let (a, b) = (ring[i], ring[(i + 1) % 4]);
        out.push([a, b, top]);
        out.push([b, a, bottom]);
    }
    out
}

/// Latitude/longitude sphere centred at the origin.
pub fn uv_sphere_triangles(radius: f64, segments: usize, rings: usize) -> Vec<Triangle> {
    let vertex = |i: usize, j: usize| -> Point3 {
        let theta = PI * i as f64 / rings as f64;
        let phi = TAU * (j % segments) as f64 / segments as f64;
        if i == 0 {
            return [0.0, 0.0, radius];
        }
        if i == rings {
            return [0.0, 0.0, -radius];
        }
        [radius * theta.sin() * phi.cos(), radius * theta.sin() * phi.sin(), radius * theta.cos()]
    };
    let mut out = Vec::new();
    for i in 0..rings {
        for j in 0..segments {
            let (a, b, c, d) = (vertex(i, j), vertex(i + 1, j), vertex(i + 1, j + 1), vertex(i, j + 1));
            if i != 0 {
                out.push([a, b, d]);
            }
            if i + 1 != rings {
                out.push([b, c, d]);
            }
        }
    }
    out
}

/// Torus around the z axis, centred at the origin.
pub fn torus_triangles(major: f64, minor: f64, segments: usize, rings: usize) -> Vec<Triangle> {
    let vertex = |i: usize, j: usize| -> Point3 {
        let u = TAU * (i % segments) as f64 / segments as f64;
        let v = TAU * (j % rings) as f64 / rings as f64;
        let r = major + minor * v.cos();
        [r * u.cos(), r * u.sin(), minor * v.sin()]
    };
    let mut out = Vec::new();
    for i in 0..segments {
        for j in 0..rings {
            let q = quad(vertex(i, j), vertex(i + 1, j), vertex(i + 1, j + 1), vertex(i, j + 1));
            out.extend(q);
        }
    }
    out
}

/// Regular `sides`-gon prism of height `h`, centred on the z axis.
pub fn cylinder_triangles(radius: f64, height: f64, sides: usize) -> Vec<Triangle> {
    let rim = |k: usize, z: f64| -> Point3 {
        let a = TAU * (k % sides) as f64 / sides as f64;
        [radius * a.cos(), radius * a.sin(), z]
    };
    let mut out = Vec::new();
    for k in 0..sides {
        out.push([[0.0, 0.0, 0.0], rim(k + 1, 0.0), rim(k, 0.0)]);
        out.push([[0.0, 0.0, height], rim(k, height), rim(k + 1, height)]);
        out.extend(quad(rim(k, 0.0), rim(k + 1, 0.0), rim(k + 1, height), rim(k, height)));
    }
    out
}

/// Thick-walled tube (annular prism): each cross-section has a hole.
pub fn tube_triangles(outer: f64, inner: f64, height: f64, sides: usize) -> Vec<Triangle> {
    let at = |r: f64, k: usize, z: f64| -> Point3 {
        let a = TAU * (k % sides) as f64 / sides as f64;
        [r * a.cos(), r * a.sin(), z]
    };
    let mut out = Vec::new();
    for k in 0..sides {
        out.extend(quad(at(outer, k, 0.0), at(outer, k + 1, 0.0), at(outer, k + 1, height), at(outer, k, height)));
        out.extend(quad(at(inner, k, 0.0), at(inner, k, height), at(inner, k + 1, height), at(inner, k + 1, 0.0)));
        out.extend(quad(at(inner, k, height), at(outer, k, height), at(outer, k + 1, height), at(inner, k + 1, height)));
        out.extend(quad(at(inner, k, 0.0), at(inner, k + 1, 0.0), at(outer, k + 1, 0.0), at(outer, k, 0.0)));
    }
    out
}

/// Smooth multi-scale random texture with intensities spread over
/// roughly `[20, 235]`.
pub fn textured_image(width: usize, height: usize, seed: u64) -> GrayImage {
    let mut rng = Rng::new(seed);
    let mut acc = vec![0.0; width * height];
    for (sigma, weight) in [(12.0, 1.0), (6.0, 0.7), (3.0, 0.5), (1.5, 0.3)] {
        let noise: Vec<f64> = (0..width * height).map(|_| rng.normal()).collect();
        let smooth = gaussian_blur_f64(&noise, width, height, sigma);
        // Rescale each octave to unit variance before mixing.
        let var = smooth.iter().map(|v| v * v).sum::<f64>() / smooth.len() as f64;
        let s = weight / var.sqrt().max(1e-12);
        for (a, v) in acc.iter_mut().zip(&smooth) {
            *a += s * v;
        }
    }
    let (lo, hi) = acc.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let out: Vec<f64> = acc.iter().map(|v| 20.0 + 215.0 * (v - lo) / (hi - lo)).collect();
    GrayImage::from_f64(width, height, &out)
}

/// A `size x size` template and a target whose content has moved along
/// `motion`, both cut from one textured frame with a `margin` pixel border,
/// so no fill value enters the target.
pub fn moved_pair(size: usize, margin: usize, motion: &WarpParams, seed: u64) -> (GrayImage, GrayImage) {
    let full = size + 2 * margin;
    let big = textured_image(full, full, seed);
    // The same motion about the inner frame origin: t + o - A o.
    let o = margin as f64;
    let mut m = motion.matrix();
    for row in &mut m {
        row[2] += o - (row[0] * o + row[1] * o);
    }
    let moved = warp_image(&big, &WarpParams::from_matrix(motion.kind(), m)).expect("invertible motion");
    let roi = Rect::new(margin, margin, size, size);
    (crop_roi(&big, roi).expect("inside"), crop_roi(&moved, roi).expect("inside"))
}

/// Checkerboard raster with `square` pixel cells, dark `lo` and light `hi`.
pub fn checkerboard_image(width: usize, height: usize, square: usize, lo: u8, hi: u8) -> GrayImage {
    GrayImage::from_fn(width, height, |x, y| if (x / square + y / square) % 2 == 0 { lo } else { hi })
}

/// Board poses viewing a `rows x cols` grid of `square`-mm cells from
/// varied angles and offsets about 0.5 m away.
pub fn calibration_poses(count: usize, rows: usize, cols: usize, square: f64, seed: u64) -> Vec<Pose> {
    let mut rng = Rng::new(seed);
    let (bw, bh) = ((cols - 1) as f64 * square, (rows - 1) as f64 * square);
    (0..count)
        .map(|_| {
            let rot = [rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.3, 0.3)];
            let depth = rng.uniform(380.0, 600.0);
            let centre = [rng.uniform(-90.0, 90.0), rng.uniform(-70.0, 70.0), depth];
            // Place the board centre at `centre` in the camera frame.
            let pose = Pose::new(rot, [0.0; 3]);
            let mid = pose.transform([bw / 2.0, bh / 2.0, 0.0]);
            Pose::new(rot, [centre[0] - mid[0], centre[1] - mid[1], centre[2] - mid[2]])
        })
        .collect()
}

/// Noise-free views of a 9 x 12 corner board (25 mm cells) under `model`.
pub fn calibration_views(model: &CameraModel, count: usize, seed: u64) -> Result<(Vec<CalibView>, Vec<Pose>), CalibError> {
    let (rows, cols, square) = (9, 12, 25.0);
    let poses = calibration_poses(count, rows, cols, square, seed);
    let views = poses
        .iter()
        .map(|p| synth_checkerboard(model, p, rows, cols, square))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((views, poses))
}

/// Adds independent Gaussian pixel noise to every observed corner.
pub fn add_corner_noise(views: &mut [CalibView], sigma: f64, seed: u64) {
    let mut rng = Rng::new(seed);
    for c in views.iter_mut().flat_map(|v| v.correspondences.iter_mut()) {
        c.image_point[0] += sigma * rng.normal();
        c.image_point[1] += sigma * rng.normal();
    }
}
