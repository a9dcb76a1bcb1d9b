//! Parametric image alignment by maximising the enhanced correlation
//! coefficient (ECC), and stack-wide application of the recovered warp.
//!
//! Warp convention: a [`WarpParams`] `W` maps *template* coordinates into the
//! *target* image, so that after alignment `target(W(x)) ≈ template(x)`.
//! [`warp_image`] moves content forward along `W` (`out(W(x)) = in(x)`),
//! which means `warp_image(template, W)` synthesises a target that
//! [`ecc_align`] maps back to `W`.
//!
//! Each iteration re-linearises at the current parameters. With zero-mean
//! template `t`, warped target `i_w`, and per-pixel steepest-descent images
//! `G = ∇i_w · ∂W/∂p`, the update is
//!
//! ```text
//! H = GᵀG,  pt = Gᵀt,  pi = Gᵀi_w
//! λ  = (‖i_w‖² − piᵀH⁻¹pi) / (tᵀi_w − ptᵀH⁻¹pi)
//! Δp = H⁻¹ Gᵀ(λ t − i_w)
//! ```
//!
//! which is invariant to gain and offset changes of either image.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{gaussian_blur_f64, sample_bilinear, GrayImage};

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("image has zero variance")]
    ZeroVariance,
    #[error("warp is not orientation-preserving invertible (det = {0})")]
    NonInvertible(f64),
    #[error("warp parameter vector has {got} entries, {kind:?} needs {needed}")]
    ParamCount { kind: WarpKind, needed: usize, got: usize },
    #[error("singular ECC update system")]
    Singular,
    #[error("alignment diverged (coefficient {0})")]
    Diverged(f64),
    #[error("invalid options: {0}")]
    Options(&'static str),
    #[error("too few overlapping pixels to evaluate the correlation")]
    NoOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarpKind {
    Translation,
    Euclidean,
    Affine,
}

impl WarpKind {
    pub fn param_count(self) -> usize {
        match self {
            WarpKind::Translation => 2,
            WarpKind::Euclidean => 3,
            WarpKind::Affine => 6,
        }
    }
}

impl Default for WarpKind {
    fn default() -> Self {
        WarpKind::Euclidean
    }
}

/// Warp parameters.
///
/// * translation: `[tx, ty]`
/// * euclidean: `[theta, tx, ty]`, matrix `[[cos, -sin, tx], [sin, cos, ty]]`
/// * affine: `[a, b, tx, c, d, ty]`, matrix `[[1+a, b, tx], [c, 1+d, ty]]`
#[derive(Debug, Clone, PartialEq)]
pub struct WarpParams {
    kind: WarpKind,
    p: Vec<f64>,
}

pub type Matrix2x3 = [[f64; 3]; 2];

impl WarpParams {
    pub fn new(kind: WarpKind, p: Vec<f64>) -> Result<Self, RegistrationError> {
        if p.len() != kind.param_count() {
            return Err(RegistrationError::ParamCount { kind, needed: kind.param_count(), got: p.len() });
        }
        Ok(Self { kind, p })
    }

    pub fn identity(kind: WarpKind) -> Self {
        Self { kind, p: vec![0.0; kind.param_count()] }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { kind: WarpKind::Translation, p: vec![tx, ty] }
    }

    pub fn euclidean(theta: f64, tx: f64, ty: f64) -> Self {
        Self { kind: WarpKind::Euclidean, p: vec![theta, tx, ty] }
    }

    pub fn affine(m: Matrix2x3) -> Self {
        Self {
            kind: WarpKind::Affine,
            p: vec![m[0][0] - 1.0, m[0][1], m[0][2], m[1][0], m[1][1] - 1.0, m[1][2]],
        }
    }

    pub fn kind(&self) -> WarpKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.p
    }

    pub fn matrix(&self) -> Matrix2x3 {
        match self.kind {
            WarpKind::Translation => [[1.0, 0.0, self.p[0]], [0.0, 1.0, self.p[1]]],
            WarpKind::Euclidean => {
                let (s, c) = self.p[0].sin_cos();
                [[c, -s, self.p[1]], [s, c, self.p[2]]]
            }
            WarpKind::Affine => {
                let p = &self.p;
                [[1.0 + p[0], p[1], p[2]], [p[3], 1.0 + p[4], p[5]]]
            }
        }
    }

    /// Rebuilds parameters of `kind` from a matrix; rotation for euclidean
    /// warps is read from the first column.
    pub fn from_matrix(kind: WarpKind, m: Matrix2x3) -> Self {
        match kind {
            WarpKind::Translation => Self::translation(m[0][2], m[1][2]),
            WarpKind::Euclidean => Self::euclidean(m[1][0].atan2(m[0][0]), m[0][2], m[1][2]),
            WarpKind::Affine => Self::affine(m),
        }
    }

    pub fn determinant(&self) -> f64 {
        let m = self.matrix();
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = self.matrix();
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    /// Inverse warp of the same kind.
    pub fn inverse(&self) -> Result<Self, RegistrationError> {
        let det = self.determinant();
        if !(det > 0.0) {
            return Err(RegistrationError::NonInvertible(det));
        }
        let m = self.matrix();
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        let t = [
            -(inv[0][0] * m[0][2] + inv[0][1] * m[1][2]),
            -(inv[1][0] * m[0][2] + inv[1][1] * m[1][2]),
        ];
        Ok(Self::from_matrix(self.kind, [[inv[0][0], inv[0][1], t[0]], [inv[1][0], inv[1][1], t[1]]]))
    }

    /// Same warp expressed on an image downscaled by two, where coarse pixel
    /// `i` covers fine pixels `2i` and `2i + 1`.
    fn to_coarser(&self) -> Self {
        let m = self.matrix();
        let mut out = m;
        for r in 0..2 {
            let lin = (m[r][0] - if r == 0 { 1.0 } else { 0.0 }) * 0.5 + (m[r][1] - if r == 1 { 1.0 } else { 0.0 }) * 0.5;
            out[r][2] = (m[r][2] + lin) / 2.0;
        }
        Self::from_matrix(self.kind, out)
    }

    fn to_finer(&self) -> Self {
        let m = self.matrix();
        let mut out = m;
        for r in 0..2 {
            let lin = (m[r][0] - if r == 0 { 1.0 } else { 0.0 }) * 0.5 + (m[r][1] - if r == 1 { 1.0 } else { 0.0 }) * 0.5;
            out[r][2] = 2.0 * m[r][2] - lin;
        }
        Self::from_matrix(self.kind, out)
    }
}

/// JSON form `{kind, matrix: [[..],[..]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpFile {
    pub kind: WarpKind,
    pub matrix: Matrix2x3,
}

impl From<&WarpParams> for WarpFile {
    fn from(w: &WarpParams) -> Self {
        Self { kind: w.kind, matrix: w.matrix() }
    }
}

impl From<&WarpFile> for WarpParams {
    fn from(f: &WarpFile) -> Self {
        WarpParams::from_matrix(f.kind, f.matrix)
    }
}

impl Serialize for WarpParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        WarpFile::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for WarpParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(WarpParams::from(&WarpFile::deserialize(d)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EccOptions {
    pub max_iterations: usize,
    pub epsilon: f64,
    pub pyramid_levels: usize,
}

impl Default for EccOptions {
    fn default() -> Self {
        Self { max_iterations: 50, epsilon: 1e-6, pyramid_levels: 3 }
    }
}

impl EccOptions {
    fn validate(&self) -> Result<(), RegistrationError> {
        if self.max_iterations < 1 {
            return Err(RegistrationError::Options("max_iterations must be >= 1"));
        }
        if !(self.epsilon > 0.0) {
            return Err(RegistrationError::Options("epsilon must be > 0"));
        }
        if self.pyramid_levels < 1 {
            return Err(RegistrationError::Options("pyramid_levels must be >= 1"));
        }
        Ok(())
    }
}

fn zero_mean_correlation(a: &[f64], b: &[f64], mask: Option<&[bool]>) -> Result<f64, RegistrationError> {
    let keep = |i: usize| mask.map_or(true, |m| m[i]);
    let (mut n, mut sa, mut sb) = (0usize, 0.0, 0.0);
    for i in 0..a.len() {
        if keep(i) {
            n += 1;
            sa += a[i];
            sb += b[i];
        }
    }
    if n < 2 {
        return Err(RegistrationError::NoOverlap);
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        if keep(i) {
            let (x, y) = (a[i] - ma, b[i] - mb);
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(RegistrationError::ZeroVariance);
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Normalised correlation of the zero-mean images.
pub fn ecc_coefficient(a: &GrayImage, b: &GrayImage) -> Result<f64, RegistrationError> {
    if a.dims() != b.dims() {
        return Err(RegistrationError::DimensionMismatch(a.dims(), b.dims()));
    }
    zero_mean_correlation(&a.to_f64(), &b.to_f64(), None)
}

/// Coefficient over the centre of the frame, discarding `border_fraction`
/// of each side.
pub fn interior_coefficient(a: &GrayImage, b: &GrayImage, border_fraction: f64) -> Result<f64, RegistrationError> {
    if a.dims() != b.dims() {
        return Err(RegistrationError::DimensionMismatch(a.dims(), b.dims()));
    }
    let (w, h) = a.dims();
    let bx = (w as f64 * border_fraction).round() as usize;
    let by = (h as f64 * border_fraction).round() as usize;
    let mask: Vec<bool> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            x >= bx && x + bx < w && y >= by && y + by < h
        })
        .collect();
    zero_mean_correlation(&a.to_f64(), &b.to_f64(), Some(&mask))
}

/// Moves image content along `w`; uncovered pixels are 0.
pub fn warp_image(img: &GrayImage, w: &WarpParams) -> Result<GrayImage, RegistrationError> {
    let inv = w.inverse()?;
    let (width, height) = img.dims();
    let src = img.to_f64();
    let (values, _) = sample_through(&src, width, height, &inv, width, height);
    Ok(GrayImage::from_f64(width, height, &values))
}

/// `out(x) = src(w(x))` over an `out_w x out_h` grid, with validity mask.
fn sample_through(src: &[f64], w: usize, h: usize, warp: &WarpParams, out_w: usize, out_h: usize) -> (Vec<f64>, Vec<bool>) {
    let m = warp.matrix();
    let mut values = vec![0.0; out_w * out_h];
    let mut valid = vec![false; out_w * out_h];
    for y in 0..out_h {
        for x in 0..out_w {
            let (xf, yf) = (x as f64, y as f64);
            let sx = m[0][0] * xf + m[0][1] * yf + m[0][2];
            let sy = m[1][0] * xf + m[1][1] * yf + m[1][2];
            if let Some(v) = sample_bilinear(src, w, h, sx, sy) {
                values[y * out_w + x] = v;
                valid[y * out_w + x] = true;
            }
        }
    }
    (values, valid)
}

struct Level {
    width: usize,
    height: usize,
    template: Vec<f64>,
    target: Vec<f64>,
    grad_x: Vec<f64>,
    grad_y: Vec<f64>,
}

const GRADIENT_SMOOTHING: f64 = 0.5;

fn downscale(values: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (cw, ch) = (w / 2, h / 2);
    let mut out = vec![0.0; cw * ch];
    for y in 0..ch {
        for x in 0..cw {
            let at = |xx: usize, yy: usize| values[yy * w + xx];
            out[y * cw + x] = 0.25 * (at(2 * x, 2 * y) + at(2 * x + 1, 2 * y) + at(2 * x, 2 * y + 1) + at(2 * x + 1, 2 * y + 1));
        }
    }
    (out, cw, ch)
}

fn gradients(values: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            gx[i] = match (x > 0, x + 1 < w) {
                (true, true) => (values[i + 1] - values[i - 1]) / 2.0,
                (false, true) => values[i + 1] - values[i],
                (true, false) => values[i] - values[i - 1],
                _ => 0.0,
            };
            gy[i] = match (y > 0, y + 1 < h) {
                (true, true) => (values[i + w] - values[i - w]) / 2.0,
                (false, true) => values[i + w] - values[i],
                (true, false) => values[i] - values[i - w],
                _ => 0.0,
            };
        }
    }
    (gx, gy)
}

fn build_pyramid(template: &GrayImage, target: &GrayImage, levels: usize) -> Vec<Level> {
    let (mut w, mut h) = template.dims();
    let mut t = template.to_f64();
    let mut s = target.to_f64();
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        if level > 0 {
            if w / 2 < 8 || h / 2 < 8 {
                break;
            }
            let (t2, w2, h2) = downscale(&t, w, h);
            let (s2, _, _) = downscale(&s, w, h);
            t = t2;
            s = s2;
            w = w2;
            h = h2;
        }
        let ts = gaussian_blur_f64(&t, w, h, GRADIENT_SMOOTHING);
        let ss = gaussian_blur_f64(&s, w, h, GRADIENT_SMOOTHING);
        let (grad_x, grad_y) = gradients(&ss, w, h);
        out.push(Level { width: w, height: h, template: ts, target: ss, grad_x, grad_y });
    }
    out
}

/// Warp Jacobian `∂W/∂p` at `(x, y)` as two rows.
fn warp_jacobian(w: &WarpParams, x: f64, y: f64, jx: &mut [f64], jy: &mut [f64]) {
    match w.kind {
        WarpKind::Translation => {
            jx.copy_from_slice(&[1.0, 0.0]);
            jy.copy_from_slice(&[0.0, 1.0]);
        }
        WarpKind::Euclidean => {
            let (s, c) = w.p[0].sin_cos();
            jx.copy_from_slice(&[-s * x - c * y, 1.0, 0.0]);
            jy.copy_from_slice(&[c * x - s * y, 0.0, 1.0]);
        }
        WarpKind::Affine => {
            jx.copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0]);
            jy.copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0]);
        }
    }
}

/// Correlation of the template with the target sampled through `warp`.
fn level_coefficient(level: &Level, warp: &WarpParams) -> Result<f64, RegistrationError> {
    let (warped, valid) = sample_through(&level.target, level.width, level.height, warp, level.width, level.height);
    zero_mean_correlation(&level.template, &warped, Some(&valid))
}

/// Runs forward-additive ECC iterations on one pyramid level.
fn align_level(level: &Level, mut warp: WarpParams, opts: &EccOptions) -> Result<(WarpParams, f64), RegistrationError> {
    let (w, h) = (level.width, level.height);
    let n = warp.kind.param_count();
    let mut rho = f64::NEG_INFINITY;
    let mut best = (warp.clone(), f64::NEG_INFINITY);
    let mut jx = vec![0.0; n];
    let mut jy = vec![0.0; n];

    for _ in 0..opts.max_iterations {
        let (iw, valid) = sample_through(&level.target, w, h, &warp, w, h);
        let (gxw, _) = sample_through(&level.grad_x, w, h, &warp, w, h);
        let (gyw, _) = sample_through(&level.grad_y, w, h, &warp, w, h);

        let idx: Vec<usize> = (0..w * h).filter(|&i| valid[i]).collect();
        if idx.len() < 2 * n + 2 {
            return Err(RegistrationError::NoOverlap);
        }
        let count = idx.len() as f64;
        let mt = idx.iter().map(|&i| level.template[i]).sum::<f64>() / count;
        let mi = idx.iter().map(|&i| iw[i]).sum::<f64>() / count;

        let mut g = DMatrix::<f64>::zeros(idx.len(), n);
        let mut tz = DVector::<f64>::zeros(idx.len());
        let mut iz = DVector::<f64>::zeros(idx.len());
        for (row, &i) in idx.iter().enumerate() {
            let (x, y) = ((i % w) as f64, (i / w) as f64);
            warp_jacobian(&warp, x, y, &mut jx, &mut jy);
            for k in 0..n {
                g[(row, k)] = gxw[i] * jx[k] + gyw[i] * jy[k];
            }
            tz[row] = level.template[i] - mt;
            iz[row] = iw[i] - mi;
        }
        let t_norm = tz.norm();
        let i_norm = iz.norm();
        if t_norm == 0.0 || i_norm == 0.0 {
            return Err(RegistrationError::ZeroVariance);
        }
        let correlation = tz.dot(&iz);
        let previous = rho;
        rho = correlation / (t_norm * i_norm);
        if rho > best.1 {
            best = (warp.clone(), rho);
        }
        if (rho - previous).abs() < opts.epsilon {
            break;
        }

        let gt = g.transpose();
        let hessian = &gt * &g;
        let chol = hessian.cholesky().ok_or(RegistrationError::Singular)?;
        let i_proj = &gt * &iz;
        let t_proj = &gt * &tz;
        let i_proj_h = chol.solve(&i_proj);
        let lambda_n = i_norm * i_norm - i_proj.dot(&i_proj_h);
        let lambda_d = correlation - t_proj.dot(&i_proj_h);
        if !(lambda_d > 0.0) {
            break;
        }
        let lambda = lambda_n / lambda_d;
        let err = &tz * lambda - &iz;
        let delta = chol.solve(&(&gt * err));
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(RegistrationError::Singular);
        }
        for k in 0..n {
            warp.p[k] += delta[k];
        }
    }
    // Score the parameters left by the final update too.
    if let Ok(final_rho) = level_coefficient(level, &warp) {
        if final_rho > best.1 {
            best = (warp, final_rho);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EccResult {
    pub warp: WarpParams,
    /// Coefficient at full resolution for the returned warp.
    pub coefficient: f64,
    /// Full-resolution coefficient after each pyramid level, coarse to fine.
    pub level_coefficients: Vec<f64>,
}

/// Coarse-to-fine ECC maximisation aligning `target` onto `template`.
pub fn ecc_align(
    template: &GrayImage,
    target: &GrayImage,
    kind: WarpKind,
    init: &WarpParams,
    opts: &EccOptions,
) -> Result<EccResult, RegistrationError> {
    opts.validate()?;
    if template.dims() != target.dims() {
        return Err(RegistrationError::DimensionMismatch(template.dims(), target.dims()));
    }
    let init = if init.kind == kind {
        init.clone()
    } else {
        WarpParams::from_matrix(kind, init.matrix())
    };
    let pyramid = build_pyramid(template, target, opts.pyramid_levels);
    let finest = &pyramid[0];
    for img in [&finest.template, &finest.target] {
        let first = img[0];
        if img.iter().all(|&v| v == first) {
            return Err(RegistrationError::ZeroVariance);
        }
    }

    let coarsest = pyramid.len() - 1;
    let mut warp = init.clone();
    for _ in 0..coarsest {
        warp = warp.to_coarser();
    }
    let mut best = (init.clone(), level_coefficient(finest, &init).unwrap_or(f64::NEG_INFINITY));
    let mut level_coefficients = Vec::with_capacity(pyramid.len());
    for level_index in (0..pyramid.len()).rev() {
        let (refined, _) = align_level(&pyramid[level_index], warp, opts)?;
        let mut at_full = refined.clone();
        for _ in 0..level_index {
            at_full = at_full.to_finer();
        }
        let full_rho = level_coefficient(finest, &at_full).unwrap_or(f64::NEG_INFINITY);
        if full_rho > best.1 {
            best = (at_full, full_rho);
        }
        level_coefficients.push(best.1);
        // Continue from the best estimate so far, expressed on the next level.
        warp = best.0.clone();
        for _ in 0..level_index.saturating_sub(1) {
            warp = warp.to_coarser();
        }
    }
    let (warp, coefficient) = best;
    if !(coefficient >= 0.0) {
        return Err(RegistrationError::Diverged(coefficient));
    }
    Ok(EccResult { warp, coefficient, level_coefficients })
}

/// Estimates one warp from a single layer and applies it to every image of
/// the job, bringing the stack into the reference frame.
pub fn register_job(
    reference: &GrayImage,
    source_same_layer: &GrayImage,
    stack: &[GrayImage],
    kind: WarpKind,
    opts: &EccOptions,
) -> Result<(Vec<GrayImage>, EccResult), RegistrationError> {
    if let Some(bad) = stack.iter().find(|img| img.dims() != source_same_layer.dims()) {
        return Err(RegistrationError::DimensionMismatch(source_same_layer.dims(), bad.dims()));
    }
    let result = ecc_align(reference, source_same_layer, kind, &WarpParams::identity(kind), opts)?;
    let aligned = apply_to_stack(stack, &result.warp)?;
    Ok((aligned, result))
}

/// Resamples each image through `w`, i.e. `out(x) = img(w(x))`.
pub fn apply_to_stack(stack: &[GrayImage], w: &WarpParams) -> Result<Vec<GrayImage>, RegistrationError> {
    let inv = w.inverse()?;
    stack.iter().map(|img| warp_image(img, &inv)).collect()
}

/// Mean distance between where `a` and `b` send the four image corners.
pub fn corner_error(a: &WarpParams, b: &WarpParams, width: usize, height: usize) -> f64 {
    let (w, h) = ((width - 1) as f64, (height - 1) as f64);
    [(0.0, 0.0), (w, 0.0), (0.0, h), (w, h)]
        .iter()
        .map(|&(x, y)| {
            let (ax, ay) = a.apply(x, y);
            let (bx, by) = b.apply(x, y);
            ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
        })
        .sum::<f64>()
        / 4.0
}
