//! Visual defect overlays and the occluded-bed surrogate.

use serde::{Deserialize, Serialize};

use crate::image::{quantize, GrayImage};
use crate::rng::Rng;

use super::raster::fill_even_odd;
use super::{Interval, SynthError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DefectClass {
    Good,
    Agglomerate,
    ForeignObject,
    Porous,
    Striation,
    /// Camera view blocked during acquisition (process-flow outlier).
    Occluded,
}

impl DefectClass {
    /// The five quality classes, in label order.
    pub const QUALITY: [DefectClass; 5] = [
        DefectClass::Good,
        DefectClass::Agglomerate,
        DefectClass::ForeignObject,
        DefectClass::Porous,
        DefectClass::Striation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DefectClass::Good => "good",
            DefectClass::Agglomerate => "agglomerate",
            DefectClass::ForeignObject => "foreign_object",
            DefectClass::Porous => "porous",
            DefectClass::Striation => "striation",
            DefectClass::Occluded => "occluded",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [Self::QUALITY.as_slice(), &[DefectClass::Occluded]]
            .concat()
            .into_iter()
            .find(|c| c.label() == s)
    }
}

/// Inclusive layer range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerRange {
    pub start: usize,
    pub end: usize,
}

impl LayerRange {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.start..=self.end).contains(&k)
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub class: DefectClass,
    pub layers: LayerRange,
    /// Signed intensity change applied inside the defect.
    pub intensity_offset: f64,
    /// Striation band width, or blob diameter, in pixels.
    #[serde(default = "default_size")]
    pub size: Interval,
    /// Fraction of part pixels turned into pores.
    #[serde(default = "default_density")]
    pub density: Interval,
}

fn default_size() -> Interval {
    Interval::new(8.0, 30.0)
}

fn default_density() -> Interval {
    Interval::new(0.02, 0.06)
}

impl DefectSpec {
    /// Spec with the stated geometry defaults for its class.
    pub fn new(class: DefectClass, layers: LayerRange, intensity_offset: f64) -> Self {
        let size = match class {
            DefectClass::Striation => Interval::new(2.0, 6.0),
            DefectClass::ForeignObject => Interval::new(8.0, 30.0),
            DefectClass::Agglomerate => Interval::new(10.0, 40.0),
            DefectClass::Occluded => Interval::new(0.6, 0.95),
            _ => default_size(),
        };
        Self { class, layers, intensity_offset, size, density: default_density() }
    }

    pub fn with_size(mut self, size: Interval) -> Self {
        self.size = size;
        self
    }

    pub fn with_density(mut self, density: Interval) -> Self {
        self.density = density;
        self
    }
}

/// Geometry actually drawn for one injected defect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DefectParams {
    Striation { x: usize, width: usize, offset: f64 },
    ForeignObject { centre: [f64; 2], diameter: f64, vertices: usize, offset: f64 },
    Agglomerate { centre: [f64; 2], diameter: f64, offset: f64 },
    Porous { pores: usize, offset: f64 },
    Occluded { side: String, coverage: f64, level: f64 },
}

fn apply_offset(img: &mut GrayImage, mask: &[bool], offset: impl Fn(usize) -> f64) {
    for (i, (p, &m)) in img.pixels_mut().iter_mut().zip(mask).enumerate() {
        if m {
            *p = quantize(*p as f64 + offset(i));
        }
    }
}

fn convex_hull(mut pts: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> =
            if pass == 0 { Box::new(pts.iter()) } else { Box::new(pts.iter().rev()) };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Overlays a defect of `spec.class`. Returns the new image, the mask of
/// affected pixels and the sampled geometry. `part_mask` is required for
/// porosity.
pub fn inject_defect(
    img: &GrayImage,
    spec: &DefectSpec,
    part_mask: Option<&[bool]>,
    rng: &mut Rng,
) -> Result<(GrayImage, Vec<bool>, DefectParams), SynthError> {
    let (w, h) = img.dims();
    let mut out = img.clone();
    let mut mask = vec![false; w * h];
    let offset = spec.intensity_offset;
    let params = match spec.class {
        DefectClass::Good => return Err(SynthError::GoodDefect),
        DefectClass::Striation => {
            let width = (rng.uniform(spec.size.lo, spec.size.hi).round() as usize).clamp(1, w);
            let x = rng.below((w - width + 1) as u64) as usize;
            for y in 0..h {
                for xx in x..x + width {
                    mask[y * w + xx] = true;
                }
            }
            apply_offset(&mut out, &mask, |_| offset);
            DefectParams::Striation { x, width, offset }
        }
        DefectClass::ForeignObject => {
            let diameter = rng.uniform(spec.size.lo, spec.size.hi);
            let r = diameter / 2.0;
            let centre = [rng.uniform(r, (w as f64 - r).max(r)), rng.uniform(r, (h as f64 - r).max(r))];
            let n = 6 + rng.below(7) as usize;
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|_| {
                    let a = rng.uniform(0.0, std::f64::consts::TAU);
                    let rr = r * rng.uniform(0.55, 1.0);
                    [centre[0] + rr * a.cos(), centre[1] + rr * a.sin()]
                })
                .collect();
            let hull = convex_hull(pts);
            let (m, _) = fill_even_odd(&[hull.clone()], w, h);
            mask = m;
            apply_offset(&mut out, &mask, |_| offset);
            DefectParams::ForeignObject { centre, diameter, vertices: hull.len(), offset }
        }
        DefectClass::Agglomerate => {
            let diameter = rng.uniform(spec.size.lo, spec.size.hi);
            let r = diameter / 2.0;
            let centre = [rng.uniform(r, (w as f64 - r).max(r)), rng.uniform(r, (h as f64 - r).max(r))];
            // Gaussian bump truncated at the nominal radius.
            let s = r / 2.0;
            let mut profile = vec![0.0; w * h];
            for y in 0..h {
                for x in 0..w {
                    let d2 = (x as f64 + 0.5 - centre[0]).powi(2) + (y as f64 + 0.5 - centre[1]).powi(2);
                    if d2 <= r * r {
                        mask[y * w + x] = true;
                        profile[y * w + x] = (-d2 / (2.0 * s * s)).exp();
                    }
                }
            }
            apply_offset(&mut out, &mask, |i| offset * profile[i]);
            DefectParams::Agglomerate { centre, diameter, offset }
        }
        DefectClass::Porous => {
            let part = part_mask.ok_or(SynthError::EmptyPart)?;
            let candidates: Vec<usize> = (0..w * h).filter(|&i| part[i]).collect();
            if candidates.is_empty() {
                return Err(SynthError::EmptyPart);
            }
            let density = rng.uniform(spec.density.lo, spec.density.hi);
            let k = ((density * candidates.len() as f64).round() as usize).clamp(1, candidates.len());
            let mut pick = candidates;
            // Partial shuffle: the first k entries become the pores.
            for i in 0..k {
                let j = i + rng.below((pick.len() - i) as u64) as usize;
                pick.swap(i, j);
            }
            for &i in &pick[..k] {
                mask[i] = true;
            }
            apply_offset(&mut out, &mask, |_| -offset);
            DefectParams::Porous { pores: k, offset }
        }
        DefectClass::Occluded => return Ok(occlude(img, spec.size, rng)),
    };
    Ok((out, mask, params))
}

/// Covers a `coverage` fraction of the frame from one side with a flat
/// occluder, imitating an acquisition that missed the print bed.
pub fn occlude(img: &GrayImage, coverage: Interval, rng: &mut Rng) -> (GrayImage, Vec<bool>, DefectParams) {
    let (w, h) = img.dims();
    let frac = rng.uniform(coverage.lo.max(0.0), coverage.hi.min(1.0));
    let side = ["left", "right", "top", "bottom"][rng.below(4) as usize];
    let level = rng.uniform(0.0, 255.0);
    let slope = rng.uniform(-1.5, 1.5);
    let mut mask = vec![false; w * h];
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            let covered = match side {
                "left" => (x as f64 + 0.5) < frac * w as f64,
                "right" => (x as f64 + 0.5) >= (1.0 - frac) * w as f64,
                "top" => (y as f64 + 0.5) < frac * h as f64,
                _ => (y as f64 + 0.5) >= (1.0 - frac) * h as f64,
            };
            if covered {
                let i = y * w + x;
                mask[i] = true;
                let v = level + slope * (x as f64 - w as f64 / 2.0) + 3.0 * rng.normal();
                out.pixels_mut()[i] = quantize(v);
            }
        }
    }
    (out, mask, DefectParams::Occluded { side: side.to_string(), coverage: frac, level })
}
