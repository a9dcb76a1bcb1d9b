//! Grayscale layer images, temperature mapping and raster primitives.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported PGM maxval {0} (only 255 is accepted)")]
    UnsupportedMaxval(u32),
    #[error("degenerate image dimensions {width}x{height}")]
    DegenerateDimensions { width: usize, height: usize },
    #[error("truncated PGM payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("pixel buffer of length {len} does not match {width}x{height}")]
    BufferSize { width: usize, height: usize, len: usize },
    #[error("region {roi:?} lies outside a {width}x{height} image")]
    RoiOutOfBounds { roi: Rect, width: usize, height: usize },
    #[error("image statistics requested over an empty set")]
    EmptySet,
    #[error("blur sigma must be non-negative, got {0}")]
    NegativeSigma(f64),
}

/// 8-bit single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::DegenerateDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(ImageError::BufferSize { width, height, len: pixels.len() });
        }
        Ok(Self { width, height, pixels })
    }

    /// Image with every pixel set to `value`.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "degenerate image dimensions");
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "degenerate image dimensions");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    /// Rounds and clamps a float buffer into an 8-bit image.
    pub fn from_f64(width: usize, height: usize, values: &[f64]) -> Self {
        assert_eq!(values.len(), width * height);
        Self {
            width,
            height,
            pixels: values.iter().map(|&v| quantize(v)).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| v as f64).collect()
    }
}

/// Round to nearest and clamp into `[0, 255]`.
pub fn quantize(v: f64) -> u8 {
    if v.is_nan() {
        0
    } else {
        v.round().clamp(0.0, 255.0) as u8
    }
}

/// Linear intensity-to-temperature mapping of the thermal camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempMap {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for TempMap {
    fn default() -> Self {
        Self { t_min: 20.0, t_max: 120.0 }
    }
}

impl TempMap {
    pub fn new(t_min: f64, t_max: f64) -> Option<Self> {
        (t_max > t_min).then_some(Self { t_min, t_max })
    }
}

/// Temperature in °C represented by an intensity value.
pub fn pixel_to_temperature(value: u8, map: TempMap) -> f64 {
    map.t_min + value as f64 / 255.0 * (map.t_max - map.t_min)
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Self { x, y, w, h }
    }

    pub fn full(img: &GrayImage) -> Self {
        Self::new(0, 0, img.width(), img.height())
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.x + self.w <= width && self.y + self.h <= height
    }

    /// `inner` expressed relative to `self`, mapped back to the parent frame.
    pub fn compose(&self, inner: Rect) -> Rect {
        Rect::new(self.x + inner.x, self.y + inner.y, inner.w, inner.h)
    }
}

pub fn crop_roi(img: &GrayImage, roi: Rect) -> Result<GrayImage, ImageError> {
    if !roi.fits(img.width, img.height) {
        return Err(ImageError::RoiOutOfBounds { roi, width: img.width, height: img.height });
    }
    let mut pixels = Vec::with_capacity(roi.w * roi.h);
    for y in roi.y..roi.y + roi.h {
        let start = y * img.width + roi.x;
        pixels.extend_from_slice(&img.pixels[start..start + roi.w]);
    }
    Ok(GrayImage { width: roi.w, height: roi.h, pixels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageStats {
    pub min: u8,
    pub max: u8,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Statistics pooled over every pixel of every image.
pub fn image_stats<'a, I>(imgs: I) -> Result<ImageStats, ImageError>
where
    I: IntoIterator<Item = &'a GrayImage>,
{
    let mut n = 0u64;
    let mut sum = 0f64;
    let mut sum_sq = 0f64;
    let mut min = u8::MAX;
    let mut max = u8::MIN;
    for img in imgs {
        for &p in &img.pixels {
            n += 1;
            sum += p as f64;
            sum_sq += (p as f64) * (p as f64);
            min = min.min(p);
            max = max.max(p);
        }
    }
    if n == 0 {
        return Err(ImageError::EmptySet);
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    Ok(ImageStats { min, max, mean, std: var.sqrt() })
}

/// Normalised 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Separable Gaussian blur of a float buffer with clamp-to-edge borders.
pub fn gaussian_blur_f64(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return values.to_vec();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0.0; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[clamp(x as isize + k as isize - r, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * tmp[clamp(y as isize + k as isize - r, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage, ImageError> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(ImageError::NegativeSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let out = gaussian_blur_f64(&img.to_f64(), img.width, img.height, sigma);
    Ok(GrayImage::from_f64(img.width, img.height, &out))
}

/// Bilinear lookup in a float raster; `None` outside the sampling domain
/// `[0, w-1] x [0, h-1]`.
pub fn sample_bilinear(values: &[f64], width: usize, height: usize, x: f64, y: f64) -> Option<f64> {
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
        return None;
    }
    let x0 = (x.floor() as usize).min(width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |xx: usize, yy: usize| values[yy * width + xx];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    Some(top * (1.0 - fy) + bottom * fy)
}

// ------------------------------------------------------------------------
// PGM (P5) I/O

fn parse_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut pos = 0usize;
    let mut token = |what: &str| -> Result<String, ImageError> {
        // Whitespace and '#' comments separate header tokens.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::MalformedHeader(format!("missing {what}"))),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token("magic")?;
    if magic != "P5" {
        return Err(ImageError::MalformedHeader(format!("bad magic {magic:?}")));
    }
    let mut number = |what: &str| -> Result<u32, ImageError> {
        let t = token(what)?;
        t.parse::<u32>()
            .map_err(|_| ImageError::MalformedHeader(format!("invalid {what} {t:?}")))
    };
    let width = number("width")? as usize;
    let height = number("height")? as usize;
    let maxval = number("maxval")?;
    // Exactly one whitespace byte separates the header from the payload.
    let payload_start = pos + 1;
    if width == 0 || height == 0 {
        return Err(ImageError::DegenerateDimensions { width, height });
    }
    if maxval != 255 {
        return Err(ImageError::UnsupportedMaxval(maxval));
    }
    let expected = width * height;
    let found = bytes.len().saturating_sub(payload_start);
    if found < expected {
        return Err(ImageError::Truncated { expected, found });
    }
    GrayImage::new(width, height, bytes[payload_start..payload_start + expected].to_vec())
}

pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    parse_pgm(bytes)
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        io::ErrorKind::NotFound => ImageError::NotFound(path.to_path_buf()),
        _ => ImageError::Io { path: path.to_path_buf(), source: e },
    })?;
    parse_pgm(&bytes)
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| ImageError::Io { path: path.to_path_buf(), source: e })
}
