//! Pinhole camera with two-term radial distortion, checkerboard calibration by
//! Levenberg–Marquardt on the reprojection error, and image undistortion.
//!
//! Projection of a board point `P` seen from pose `(R, t)`:
//!
//! ```text
//! (X, Y, Z) = R P + t
//! x = X / Z,  y = Y / Z,  r² = x² + y²
//! (xd, yd)  = (x, y) (1 + k1 r² + k2 r⁴)
//! (u, v)    = (fx xd + cx, fy yd + cy)
//! ```
//!
//! Pixel coordinates follow the raster convention of [`crate::image`]: the
//! centre of pixel `(i, j)` sits at `(i, j)`.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{sample_bilinear, GrayImage};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("point has non-positive depth {0} in the camera frame")]
    BehindCamera(f64),
    #[error("undistortion did not converge for normalized point ({0}, {1})")]
    NoInverse(f64, f64),
    #[error("calibration needs at least {needed} views, got {got}")]
    InsufficientViews { needed: usize, got: usize },
    #[error("view {view} has {got} correspondences; at least {needed} are required")]
    InsufficientPoints { view: usize, needed: usize, got: usize },
    #[error("non-finite coordinate in view {0}")]
    NonFinite(usize),
    #[error("singular system: {0}")]
    Singular(&'static str),
    #[error("Levenberg-Marquardt did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("{views} views but {poses} poses")]
    PoseCount { views: usize, poses: usize },
    #[error("correspondence file {path}: {message}")]
    File { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
}

impl CameraModel {
    pub fn pinhole(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy, k1: 0.0, k2: 0.0 }
    }

    pub fn with_distortion(mut self, k1: f64, k2: f64) -> Self {
        self.k1 = k1;
        self.k2 = k2;
        self
    }

    fn as_array(&self) -> [f64; 6] {
        [self.fx, self.fy, self.cx, self.cy, self.k1, self.k2]
    }

    fn from_slice(p: &[f64]) -> Self {
        Self { fx: p[0], fy: p[1], cx: p[2], cy: p[3], k1: p[4], k2: p[5] }
    }

    fn radial(&self, r2: f64) -> f64 {
        1.0 + self.k1 * r2 + self.k2 * r2 * r2
    }

    /// Applies radial distortion to normalized image coordinates.
    pub fn distort(&self, p: [f64; 2]) -> [f64; 2] {
        let s = self.radial(p[0] * p[0] + p[1] * p[1]);
        [p[0] * s, p[1] * s]
    }

    pub fn to_pixel(&self, n: [f64; 2]) -> [f64; 2] {
        [self.fx * n[0] + self.cx, self.fy * n[1] + self.cy]
    }

    pub fn to_normalized(&self, px: [f64; 2]) -> [f64; 2] {
        [(px[0] - self.cx) / self.fx, (px[1] - self.cy) / self.fy]
    }
}

/// Board-to-camera transform: axis-angle rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: [0.0; 3], translation: [0.0; 3] }
    }

    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Self { rotation, translation }
    }

    fn rotation_matrix(&self) -> Rotation3<f64> {
        Rotation3::from_scaled_axis(Vector3::from(self.rotation))
    }

    pub fn transform(&self, p: [f64; 3]) -> [f64; 3] {
        let q = self.rotation_matrix() * Vector3::from(p) + Vector3::from(self.translation);
        [q.x, q.y, q.z]
    }

    fn as_array(&self) -> [f64; 6] {
        let [a, b, c] = self.rotation;
        let [x, y, z] = self.translation;
        [a, b, c, x, y, z]
    }

    fn from_slice(p: &[f64]) -> Self {
        Self { rotation: [p[0], p[1], p[2]], translation: [p[3], p[4], p[5]] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    #[serde(rename = "object")]
    pub object_point: [f64; 3],
    #[serde(rename = "image")]
    pub image_point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CalibView {
    pub correspondences: Vec<Correspondence>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibResult {
    pub model: CameraModel,
    pub poses: Vec<Pose>,
    pub rms: f64,
    pub iterations: usize,
    /// Total squared reprojection error after every accepted step, starting
    /// with the initial estimate.
    pub accepted_costs: Vec<f64>,
}

/// On-disk form of a calibration, `{fx, fy, cx, cy, k1, k2, rms}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub k1: f64,
    pub k2: f64,
    pub rms: f64,
}

impl From<&CalibResult> for CalibFile {
    fn from(r: &CalibResult) -> Self {
        let m = r.model;
        Self { fx: m.fx, fy: m.fy, cx: m.cx, cy: m.cy, k1: m.k1, k2: m.k2, rms: r.rms }
    }
}

impl CalibFile {
    pub fn model(&self) -> CameraModel {
        CameraModel { fx: self.fx, fy: self.fy, cx: self.cx, cy: self.cy, k1: self.k1, k2: self.k2 }
    }
}

pub fn project_point(model: &CameraModel, pose: &Pose, p: [f64; 3]) -> Result<[f64; 2], CalibError> {
    let [x, y, z] = pose.transform(p);
    if !(z > 0.0) {
        return Err(CalibError::BehindCamera(z));
    }
    Ok(model.to_pixel(model.distort([x / z, y / z])))
}

const UNDISTORT_MAX_ITERATIONS: usize = 20;
const UNDISTORT_TOLERANCE: f64 = 1e-10;

/// Inverts the radial distortion for a normalized point.
///
/// Solves `rd = ru (1 + k1 ru² + k2 ru⁴)` for the undistorted radius by Newton
/// iteration (at most 20 steps, stopping once a step is below 1e-10) and
/// rescales the point. Fails if the radial map is not invertible at `rd`.
pub fn undistort_point(model: &CameraModel, distorted: [f64; 2]) -> Result<[f64; 2], CalibError> {
    let [xd, yd] = distorted;
    let rd = (xd * xd + yd * yd).sqrt();
    if model.k1 == 0.0 && model.k2 == 0.0 {
        return Ok(distorted);
    }
    if rd == 0.0 {
        return Ok(distorted);
    }
    let mut ru = rd;
    for _ in 0..UNDISTORT_MAX_ITERATIONS {
        let r2 = ru * ru;
        let f = ru * model.radial(r2) - rd;
        let df = 1.0 + 3.0 * model.k1 * r2 + 5.0 * model.k2 * r2 * r2;
        if !(df > 0.0) {
            break;
        }
        let step = f / df;
        ru -= step;
        if !(ru > 0.0) {
            break;
        }
        if step.abs() < UNDISTORT_TOLERANCE {
            let s = ru / rd;
            return Ok([xd * s, yd * s]);
        }
    }
    Err(CalibError::NoInverse(xd, yd))
}

pub fn reprojection_rms(model: &CameraModel, poses: &[Pose], views: &[CalibView]) -> Result<f64, CalibError> {
    if poses.len() != views.len() {
        return Err(CalibError::PoseCount { views: views.len(), poses: poses.len() });
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (pose, view) in poses.iter().zip(views) {
        for c in &view.correspondences {
            let p = project_point(model, pose, c.object_point)?;
            sum += (p[0] - c.image_point[0]).powi(2) + (p[1] - c.image_point[1]).powi(2);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).sqrt() })
}

/// Planar `rows x cols` grid of board corners at `z = 0`, projected through
/// the model. Stands in for corner detection.
pub fn synth_checkerboard(
    model: &CameraModel,
    pose: &Pose,
    rows: usize,
    cols: usize,
    square_size: f64,
) -> Result<CalibView, CalibError> {
    let mut correspondences = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let object_point = [c as f64 * square_size, r as f64 * square_size, 0.0];
            let image_point = project_point(model, pose, object_point)?;
            correspondences.push(Correspondence { object_point, image_point });
        }
    }
    Ok(CalibView { correspondences })
}

// ------------------------------------------------------------------------
// Calibration

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibOptions {
    /// Sensor size in pixels; seeds focal length and principal point.
    pub image_size: Option<(usize, usize)>,
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub relative_tolerance: f64,
}

impl Default for CalibOptions {
    fn default() -> Self {
        Self { image_size: None, max_iterations: 200, initial_damping: 1e-3, relative_tolerance: 1e-12 }
    }
}

const MIN_VIEWS: usize = 3;
const MIN_POINTS: usize = 6;

fn validate_views(views: &[CalibView]) -> Result<(), CalibError> {
    if views.len() < MIN_VIEWS {
        return Err(CalibError::InsufficientViews { needed: MIN_VIEWS, got: views.len() });
    }
    for (i, v) in views.iter().enumerate() {
        if v.correspondences.len() < MIN_POINTS {
            return Err(CalibError::InsufficientPoints { view: i, needed: MIN_POINTS, got: v.correspondences.len() });
        }
        let finite = v.correspondences.iter().all(|c| {
            c.object_point.iter().chain(c.image_point.iter()).all(|x| x.is_finite())
        });
        if !finite {
            return Err(CalibError::NonFinite(i));
        }
    }
    Ok(())
}

/// DLT homography from board-plane `(X, Y)` to normalized image points,
/// with isotropic conditioning on both sides.
fn planar_homography(src: &[[f64; 2]], dst: &[[f64; 2]]) -> Result<Matrix3<f64>, CalibError> {
    fn conditioner(pts: &[[f64; 2]]) -> Matrix3<f64> {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
        let my = pts.iter().map(|p| p[1]).sum::<f64>() / n;
        let d = pts.iter().map(|p| ((p[0] - mx).powi(2) + (p[1] - my).powi(2)).sqrt()).sum::<f64>() / n;
        let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
        Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
    }
    let ts = conditioner(src);
    let td = conditioner(dst);
    let apply = |t: &Matrix3<f64>, p: &[f64; 2]| {
        let v = t * Vector3::new(p[0], p[1], 1.0);
        [v.x / v.z, v.y / v.z]
    };
    let mut a = DMatrix::<f64>::zeros(2 * src.len(), 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let [x, y] = apply(&ts, s);
        let [u, v] = apply(&td, d);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for j in 0..9 {
            a[(2 * i, j)] = r0[j];
            a[(2 * i + 1, j)] = r1[j];
        }
    }
    // Null vector of A via the smallest eigenvector of AᵀA.
    let ata = a.transpose() * &a;
    let eig = ata.symmetric_eigen();
    let (idx, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(CalibError::Singular("empty homography system"))?;
    let h = eig.eigenvectors.column(idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse().ok_or(CalibError::Singular("homography conditioning"))?;
    Ok(td_inv * hn * ts)
}

/// Pose of a planar view from its homography to normalized coordinates.
fn pose_from_homography(h: &Matrix3<f64>) -> Result<Pose, CalibError> {
    let h1 = h.column(0).into_owned();
    let h2 = h.column(1).into_owned();
    let h3 = h.column(2).into_owned();
    let norm = h1.norm();
    if norm == 0.0 {
        return Err(CalibError::Singular("degenerate view homography"));
    }
    let mut lambda = 1.0 / norm;
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let r1 = h1 * lambda;
    let r2 = h2 * lambda;
    let t = h3 * lambda;
    let r3 = r1.cross(&r2);
    let q = Matrix3::from_columns(&[r1, r2, r3]);
    let svd = q.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    let rot = Rotation3::from_matrix_unchecked(r);
    let axis = rot.scaled_axis();
    Ok(Pose::new([axis.x, axis.y, axis.z], [t.x, t.y, t.z]))
}

fn initial_estimate(views: &[CalibView], opts: &CalibOptions) -> Result<(CameraModel, Vec<Pose>), CalibError> {
    let model = match opts.image_size {
        Some((w, h)) => CameraModel::pinhole(w as f64, w as f64, w as f64 / 2.0, h as f64 / 2.0),
        None => {
            // Unknown sensor: centre of the observed point cloud's bounding box.
            let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for c in views.iter().flat_map(|v| &v.correspondences) {
                for k in 0..2 {
                    lo[k] = lo[k].min(c.image_point[k]);
                    hi[k] = hi[k].max(c.image_point[k]);
                }
            }
            CameraModel::pinhole(600.0, 600.0, (lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0)
        }
    };
    let poses = views
        .iter()
        .map(|v| {
            let src: Vec<[f64; 2]> = v.correspondences.iter().map(|c| [c.object_point[0], c.object_point[1]]).collect();
            let dst: Vec<[f64; 2]> = v.correspondences.iter().map(|c| model.to_normalized(c.image_point)).collect();
            pose_from_homography(&planar_homography(&src, &dst)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((model, poses))
}

/// Residuals `(projected - observed)` for one view, or `None` if a point
/// falls behind the camera.
fn view_residuals(model: &CameraModel, pose: &Pose, view: &CalibView, out: &mut Vec<f64>) -> Option<()> {
    for c in &view.correspondences {
        let p = project_point(model, pose, c.object_point).ok()?;
        out.push(p[0] - c.image_point[0]);
        out.push(p[1] - c.image_point[1]);
    }
    Some(())
}

fn total_cost(params: &[f64], views: &[CalibView]) -> Option<f64> {
    let model = CameraModel::from_slice(&params[..6]);
    let mut r = Vec::new();
    for (i, v) in views.iter().enumerate() {
        let pose = Pose::from_slice(&params[6 + 6 * i..12 + 6 * i]);
        view_residuals(&model, &pose, v, &mut r)?;
    }
    Some(r.iter().map(|x| x * x).sum())
}

/// Accumulates JᵀJ and Jᵀr. Intrinsic columns are analytic; pose columns use
/// central differences.
fn normal_equations(params: &[f64], views: &[CalibView]) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = params.len();
    let model = CameraModel::from_slice(&params[..6]);
    let mut jtj = DMatrix::<f64>::zeros(n, n);
    let mut jtr = DVector::<f64>::zeros(n);
    for (vi, view) in views.iter().enumerate() {
        let base = 6 + 6 * vi;
        let pose = Pose::from_slice(&params[base..base + 6]);
        for c in &view.correspondences {
            let [x, y, z] = pose.transform(c.object_point);
            if !(z > 0.0) {
                return None;
            }
            let (xn, yn) = (x / z, y / z);
            let r2 = xn * xn + yn * yn;
            let s = model.radial(r2);
            let (xd, yd) = (xn * s, yn * s);
            let res = [model.fx * xd + model.cx - c.image_point[0], model.fy * yd + model.cy - c.image_point[1]];

            // Rows of the 2 x 12 local Jacobian.
            let mut ju = [0.0; 12];
            let mut jv = [0.0; 12];
            ju[0] = xd;
            ju[2] = 1.0;
            ju[4] = model.fx * xn * r2;
            ju[5] = model.fx * xn * r2 * r2;
            jv[1] = yd;
            jv[3] = 1.0;
            jv[4] = model.fy * yn * r2;
            jv[5] = model.fy * yn * r2 * r2;
            let mut p = pose.as_array();
            for k in 0..6 {
                let h = 1e-7 * p[k].abs().max(1.0);
                let orig = p[k];
                p[k] = orig + h;
                let plus = project_point(&model, &Pose::from_slice(&p), c.object_point).ok()?;
                p[k] = orig - h;
                let minus = project_point(&model, &Pose::from_slice(&p), c.object_point).ok()?;
                p[k] = orig;
                ju[6 + k] = (plus[0] - minus[0]) / (2.0 * h);
                jv[6 + k] = (plus[1] - minus[1]) / (2.0 * h);
            }
            let index = |k: usize| if k < 6 { k } else { base + k - 6 };
            for a in 0..12 {
                let ia = index(a);
                jtr[ia] += ju[a] * res[0] + jv[a] * res[1];
                for b in 0..12 {
                    jtj[(ia, index(b))] += ju[a] * ju[b] + jv[a] * jv[b];
                }
            }
        }
    }
    Some((jtj, jtr))
}

/// Jointly estimates intrinsics, distortion and per-view poses.
pub fn calibrate(views: &[CalibView], opts: &CalibOptions) -> Result<CalibResult, CalibError> {
    validate_views(views)?;
    let (model, poses) = initial_estimate(views, opts)?;
    let mut params: Vec<f64> = model.as_array().to_vec();
    params.extend(poses.iter().flat_map(|p| p.as_array()));

    let mut cost = total_cost(&params, views).ok_or(CalibError::Singular("initial pose places points behind camera"))?;
    let mut accepted_costs = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&params, views).ok_or(CalibError::Singular("point behind camera"))?;
        let mut step_taken = false;
        // Inner loop: raise damping until a step lowers the cost.
        while !step_taken {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let delta = match a.cholesky() {
                Some(ch) => ch.solve(&(-&jtr)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e20 {
                        return Err(CalibError::Singular("normal equations"));
                    }
                    continue;
                }
            };
            let trial: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
            match total_cost(&trial, views) {
                Some(c) if c < cost => {
                    let rel = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    params = trial;
                    cost = c;
                    accepted_costs.push(c);
                    lambda = (lambda / 10.0).max(1e-15);
                    step_taken = true;
                    if rel < opts.relative_tolerance {
                        converged = true;
                    }
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        // No descent direction left at machine precision.
                        converged = true;
                        break;
                    }
                }
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(CalibError::NoConvergence(opts.max_iterations));
    }
    let model = CameraModel::from_slice(&params[..6]);
    if !(model.fx > 0.0 && model.fy > 0.0) {
        return Err(CalibError::Singular("non-positive focal length"));
    }
    let poses: Vec<Pose> = (0..views.len()).map(|i| Pose::from_slice(&params[6 + 6 * i..12 + 6 * i])).collect();
    let rms = reprojection_rms(&model, &poses, views)?;
    Ok(CalibResult { model, poses, rms, iterations, accepted_costs })
}

// ------------------------------------------------------------------------
// Images

/// Removes lens distortion: each output pixel is taken from the distorted
/// source location predicted by the model, sampled bilinearly. Pixels whose
/// source falls outside the input are 0.
pub fn undistort_image(img: &GrayImage, model: &CameraModel) -> GrayImage {
    if model.k1 == 0.0 && model.k2 == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let src = img.to_f64();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let n = model.to_normalized([x as f64, y as f64]);
            let s = model.to_pixel(model.distort(n));
            out[y * w + x] = sample_bilinear(&src, w, h, s[0], s[1]).unwrap_or(0.0);
        }
    }
    GrayImage::from_f64(w, h, &out)
}

/// Forward counterpart of [`undistort_image`]: renders what the lens would
/// record for an ideal pinhole image. Used to synthesise distorted frames.
pub fn distort_image(img: &GrayImage, model: &CameraModel) -> GrayImage {
    if model.k1 == 0.0 && model.k2 == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dims();
    let src = img.to_f64();
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let nd = model.to_normalized([x as f64, y as f64]);
            if let Ok(nu) = undistort_point(model, nd) {
                let s = model.to_pixel(nu);
                out[y * w + x] = sample_bilinear(&src, w, h, s[0], s[1]).unwrap_or(0.0);
            }
        }
    }
    GrayImage::from_f64(w, h, &out)
}

// ------------------------------------------------------------------------
// Files

/// Reads `[[{object:[x,y,z], image:[u,v]}, ...], ...]`.
pub fn read_views(path: impl AsRef<Path>) -> Result<Vec<CalibView>, CalibError> {
    let path = path.as_ref();
    let err = |message: String| CalibError::File { path: path.display().to_string(), message };
    let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| err(e.to_string()))
}

pub fn write_views(path: impl AsRef<Path>, views: &[CalibView]) -> std::io::Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(views).expect("views serialise"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn reference_model() -> CameraModel {
        CameraModel::pinhole(600.0, 600.0, 320.0, 240.0)
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let m = reference_model();
        assert_eq!(project_point(&m, &Pose::identity(), [0.0, 0.0, 1.0]).unwrap(), [320.0, 240.0]);
    }

    #[test]
    fn pinhole_and_radial_arithmetic() {
        let m = reference_model();
        let p = project_point(&m, &Pose::identity(), [0.1, 0.0, 1.0]).unwrap();
        assert!((p[0] - 380.0).abs() < 1e-12 && (p[1] - 240.0).abs() < 1e-12);
        let d = m.with_distortion(-0.2, 0.0);
        let p = project_point(&d, &Pose::identity(), [0.1, 0.0, 1.0]).unwrap();
        // 600 * 0.1 * (1 - 0.2 * 0.01) + 320
        assert!((p[0] - 379.88).abs() < 1e-9, "{p:?}");
        assert!((p[1] - 240.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_rejected() {
        let m = reference_model();
        assert!(matches!(
            project_point(&m, &Pose::identity(), [0.0, 0.0, -1.0]),
            Err(CalibError::BehindCamera(_))
        ));
        assert!(project_point(&m, &Pose::identity(), [0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn undistort_cases() {
        let m = reference_model();
        assert_eq!(undistort_point(&m, [0.3, -0.2]).unwrap(), [0.3, -0.2]);

        let d = m.with_distortion(-0.2, 0.05);
        let mut rng = Rng::new(5);
        for _ in 0..500 {
            let p = [rng.uniform(-0.7, 0.7), rng.uniform(-0.7, 0.7)];
            let back = d.distort(undistort_point(&d, p).unwrap());
            assert!((back[0] - p[0]).abs() < 1e-8 && (back[1] - p[1]).abs() < 1e-8);
        }

        let bad = m.with_distortion(-50.0, 0.0);
        assert!(matches!(undistort_point(&bad, [1.0, 0.0]), Err(CalibError::NoInverse(..))));
    }

    #[test]
    fn rms_formula_and_homogeneity() {
        let m = reference_model();
        let pose = Pose::new([0.1, -0.05, 0.02], [-50.0, -40.0, 500.0]);
        let view = synth_checkerboard(&m, &pose, 5, 5, 20.0).unwrap();
        assert!(reprojection_rms(&m, &[pose], &[view.clone()]).unwrap() < 1e-9);

        let mut one_off = view.clone();
        one_off.correspondences[7].image_point[0] += 3.0;
        one_off.correspondences[7].image_point[1] += 4.0;
        assert!((reprojection_rms(&m, &[pose], &[one_off]).unwrap() - 1.0).abs() < 1e-9);

        let mut rng = Rng::new(9);
        let noisy: Vec<[f64; 2]> = view.correspondences.iter().map(|_| [rng.normal(), rng.normal()]).collect();
        let perturb = |scale: f64| {
            let mut v = view.clone();
            for (c, e) in v.correspondences.iter_mut().zip(&noisy) {
                c.image_point[0] += scale * e[0];
                c.image_point[1] += scale * e[1];
            }
            v
        };
        let r1 = reprojection_rms(&m, &[pose], &[perturb(1.0)]).unwrap();
        let r2 = reprojection_rms(&m, &[pose], &[perturb(2.0)]).unwrap();
        assert!((r2 - 2.0 * r1).abs() < 1e-9);

        let mut shuffled = perturb(1.0);
        rng.shuffle(&mut shuffled.correspondences);
        assert!((reprojection_rms(&m, &[pose], &[shuffled]).unwrap() - r1).abs() < 1e-12);

        assert!(matches!(reprojection_rms(&m, &[], &[view]), Err(CalibError::PoseCount { .. })));
    }

    #[test]
    fn checkerboard_generator() {
        let m = CameraModel::pinhole(1.0, 1.0, 0.0, 0.0);
        let pose = Pose::new([0.0; 3], [0.0, 0.0, 5.0]);
        let v = synth_checkerboard(&m, &pose, 3, 3, 1.0).unwrap();
        assert_eq!(v.correspondences.len(), 9);
        assert!(v.correspondences.iter().all(|c| c.image_point.iter().all(|x| x.is_finite())));
        let behind = Pose::new([0.0; 3], [0.0, 0.0, -5.0]);
        assert!(synth_checkerboard(&m, &behind, 3, 3, 1.0).is_err());
    }

    #[test]
    fn too_few_views_or_points() {
        let m = reference_model();
        let pose = Pose::new([0.0; 3], [-50.0, -50.0, 500.0]);
        let v = synth_checkerboard(&m, &pose, 4, 4, 20.0).unwrap();
        assert!(matches!(
            calibrate(&[v.clone(), v.clone()], &CalibOptions::default()),
            Err(CalibError::InsufficientViews { got: 2, .. })
        ));
        let small = CalibView { correspondences: v.correspondences[..5].to_vec() };
        assert!(matches!(
            calibrate(&[v.clone(), v.clone(), small], &CalibOptions::default()),
            Err(CalibError::InsufficientPoints { view: 2, .. })
        ));
    }

    #[test]
    fn homography_pose_recovers_exact_pinhole_pose() {
        let m = reference_model();
        let pose = Pose::new([0.2, -0.1, 0.05], [-60.0, -40.0, 450.0]);
        let view = synth_checkerboard(&m, &pose, 6, 8, 20.0).unwrap();
        let src: Vec<[f64; 2]> = view.correspondences.iter().map(|c| [c.object_point[0], c.object_point[1]]).collect();
        let dst: Vec<[f64; 2]> = view.correspondences.iter().map(|c| m.to_normalized(c.image_point)).collect();
        let est = pose_from_homography(&planar_homography(&src, &dst).unwrap()).unwrap();
        for k in 0..3 {
            assert!((est.rotation[k] - pose.rotation[k]).abs() < 1e-8);
            assert!((est.translation[k] - pose.translation[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn views_json_schema() {
        let json = r#"[[{"object":[0,0,0],"image":[1.5,2.5]}]]"#;
        let views: Vec<CalibView> = serde_json::from_str(json).unwrap();
        assert_eq!(views[0].correspondences[0].image_point, [1.5, 2.5]);
        let file = CalibFile { fx: 1.0, fy: 2.0, cx: 3.0, cy: 4.0, k1: 0.1, k2: 0.2, rms: 0.3 };
        let v: serde_json::Value = serde_json::to_value(file).unwrap();
        let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
        assert_eq!(keys.len(), 7);
        assert!(["fx", "fy", "cx", "cy", "k1", "k2", "rms"].iter().all(|k| v.get(k).is_some()));
    }
}
