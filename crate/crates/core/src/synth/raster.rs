//! Even-odd scanline fill and the SVG layer reader.

use crate::slicer::{Contour, Point2};

use super::SynthError;

/// Pixel-centre coverage of a set of closed polygons (pixel units) under the
/// even-odd rule. Pixel `(i, j)` is covered iff `(i + 0.5, j + 0.5)` is inside.
/// The flag reports whether any vertex lies outside the canvas.
pub fn fill_even_odd(polygons: &[Vec<Point2>], width: usize, height: usize) -> (Vec<bool>, bool) {
    let mut mask = vec![false; width * height];
    let clipped = polygons
        .iter()
        .flatten()
        .any(|p| p[0] < 0.0 || p[1] < 0.0 || p[0] > width as f64 || p[1] > height as f64);
    let mut xs: Vec<f64> = Vec::new();
    for j in 0..height {
        let yc = j as f64 + 0.5;
        xs.clear();
        for poly in polygons {
            let n = poly.len();
            for k in 0..n {
                let (a, b) = (poly[k], poly[(k + 1) % n]);
                if (a[1] <= yc) != (b[1] <= yc) {
                    xs.push(a[0] + (yc - a[1]) * (b[0] - a[0]) / (b[1] - a[1]));
                }
            }
        }
        xs.sort_by(f64::total_cmp);
        for span in xs.chunks_exact(2) {
            let start = (span[0] - 0.5).ceil().max(0.0);
            let end = (span[1] - 0.5).ceil().min(width as f64);
            if end <= start {
                continue;
            }
            for i in start as usize..end as usize {
                mask[j * width + i] = true;
            }
        }
    }
    (mask, clipped)
}

/// Contours in millimetres mapped onto the canvas: `px = mm * scale + offset`.
pub fn to_pixels(contours: &[Contour], scale: f64, offset: [f64; 2]) -> Vec<Vec<Point2>> {
    contours
        .iter()
        .map(|c| c.points.iter().map(|p| [p[0] * scale + offset[0], p[1] * scale + offset[1]]).collect())
        .collect()
}

/// A layer read back from an SVG written by [`crate::slicer::emit_layer_svg`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvgLayer {
    pub z: Option<f64>,
    pub scale: f64,
    pub origin: [f64; 2],
    /// Contours in pixel units as stored in the file.
    pub paths: Vec<Vec<Point2>>,
}

impl SvgLayer {
    /// Contours converted back to millimetres.
    pub fn contours_mm(&self) -> Vec<Contour> {
        self.paths
            .iter()
            .map(|p| {
                Contour::new(
                    p.iter()
                        .map(|q| [q[0] / self.scale + self.origin[0], q[1] / self.scale + self.origin[1]])
                        .collect(),
                )
            })
            .collect()
    }
}

fn attribute<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
    let key = format!(" {name}=\"");
    let start = tag.find(&key)? + key.len();
    let end = tag[start..].find('"')? + start;
    Some(&tag[start..end])
}

fn parse_path_data(d: &str) -> Result<Vec<Point2>, SynthError> {
    let bad = |m: &str| SynthError::Svg(format!("{m} in path data {d:?}"));
    let mut points = Vec::new();
    let mut closed = false;
    let mut tokens = d.split_ascii_whitespace();
    while let Some(tok) = tokens.next() {
        match tok {
            "M" | "L" => {
                if tok == "M" && !points.is_empty() {
                    return Err(bad("multiple subpaths"));
                }
                let xy = tokens.next().ok_or_else(|| bad("missing coordinate"))?;
                let (x, y) = xy.split_once(',').ok_or_else(|| bad("coordinate without comma"))?;
                let x: f64 = x.parse().map_err(|_| bad("invalid number"))?;
                let y: f64 = y.parse().map_err(|_| bad("invalid number"))?;
                points.push([x, y]);
            }
            "Z" | "z" => closed = true,
            other => return Err(bad(&format!("unsupported command {other:?}"))),
        }
    }
    if !closed {
        return Err(bad("unclosed path"));
    }
    if points.len() < 3 {
        return Err(bad("fewer than three points"));
    }
    Ok(points)
}

/// Reads the subset of SVG emitted by the slicer.
pub fn read_layer_svg(text: &str) -> Result<SvgLayer, SynthError> {
    let svg_start = text.find("<svg").ok_or_else(|| SynthError::Svg("missing <svg> element".into()))?;
    let svg_end = text[svg_start..].find('>').ok_or_else(|| SynthError::Svg("unterminated <svg> tag".into()))? + svg_start;
    let svg_tag = &text[svg_start..svg_end];
    let scale = attribute(svg_tag, "data-scale").and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let origin = attribute(svg_tag, "data-origin")
        .and_then(|s| {
            let mut it = s.split_ascii_whitespace().map(|v| v.parse::<f64>());
            match (it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y))) => Some([x, y]),
                _ => None,
            }
        })
        .unwrap_or([0.0, 0.0]);
    let z = attribute(svg_tag, "data-z").and_then(|s| s.parse().ok());

    let mut paths = Vec::new();
    let mut rest = &text[svg_end..];
    while let Some(pos) = rest.find("<path") {
        let end = rest[pos..].find('>').ok_or_else(|| SynthError::Svg("unterminated <path> tag".into()))? + pos;
        let tag = &rest[pos..end];
        let d = attribute(tag, "d").ok_or_else(|| SynthError::Svg("path without d attribute".into()))?;
        paths.push(parse_path_data(d)?);
        rest = &rest[end..];
    }
    Ok(SvgLayer { z, scale, origin, paths })
}
