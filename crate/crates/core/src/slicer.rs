//! Triangle-mesh parsing (ASCII and binary STL) and planar slicing into
//! closed layer contours.
//!
//! Contours are closed implicitly (the first point is not repeated). Outer
//! boundaries run counter-clockwise and holes clockwise; consumers fill them
//! with the even-odd rule, so no explicit nesting tree is kept.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SliceError {
    #[error("malformed ASCII STL at token {index}: {message}")]
    Grammar { index: usize, message: String },
    #[error("binary STL length {actual} does not match 84 + 50 * {count} = {expected}")]
    BinaryLength { count: u32, expected: usize, actual: usize },
    #[error("mesh has no usable triangles ({dropped} degenerate dropped)")]
    Empty { dropped: usize },
    #[error("non-finite vertex coordinate")]
    NonFinite,
    #[error("plane z = {z} is outside the open interval ({min}, {max})")]
    PlaneOutside { z: f64, min: f64, max: f64 },
    #[error("open contour chain at z = {z}: mesh is not watertight")]
    OpenChain { z: f64 },
    #[error("layer height must be positive, got {0}")]
    LayerHeight(f64),
    #[error("layer height {layer_height} yields no slice planes over a mesh of height {extent}")]
    NoLayers { layer_height: f64, extent: f64 },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];
pub type Triangle = [Point3; 3];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point3,
    pub max: Point3,
}

impl Bounds {
    fn of(triangles: &[Triangle]) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for v in triangles.iter().flatten() {
            for k in 0..3 {
                min[k] = min[k].min(v[k]);
                max[k] = max[k].max(v[k]);
            }
        }
        Self { min, max }
    }

    pub fn extent(&self) -> Point3 {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    triangles: Vec<Triangle>,
    bounds: Bounds,
    dropped: usize,
}

fn triangle_area2(t: &Triangle) -> f64 {
    let u = [t[1][0] - t[0][0], t[1][1] - t[0][1], t[1][2] - t[0][2]];
    let v = [t[2][0] - t[0][0], t[2][1] - t[0][1], t[2][2] - t[0][2]];
    let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

impl TriMesh {
    /// Builds a mesh, dropping zero-area triangles.
    pub fn new(triangles: Vec<Triangle>) -> Result<Self, SliceError> {
        if triangles.iter().flatten().flatten().any(|c| !c.is_finite()) {
            return Err(SliceError::NonFinite);
        }
        let before = triangles.len();
        let triangles: Vec<Triangle> = triangles.into_iter().filter(|t| triangle_area2(t) > 0.0).collect();
        let dropped = before - triangles.len();
        if triangles.is_empty() {
            return Err(SliceError::Empty { dropped });
        }
        let bounds = Bounds::of(&triangles);
        Ok(Self { triangles, bounds, dropped })
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds
    }

    /// Number of degenerate triangles removed while building the mesh.
    pub fn dropped_degenerate(&self) -> usize {
        self.dropped
    }

    pub fn translated(&self, d: Point3) -> TriMesh {
        let triangles = self
            .triangles
            .iter()
            .map(|t| t.map(|v| [v[0] + d[0], v[1] + d[1], v[2] + d[2]]))
            .collect();
        TriMesh::new(triangles).expect("translation keeps a valid mesh valid")
    }
}

// ------------------------------------------------------------------------
// STL I/O

fn parse_ascii(text: &str) -> Result<Vec<Triangle>, SliceError> {
    let tokens: Vec<&str> = text.split_ascii_whitespace().collect();
    let mut i = 0usize;
    let err = |index: usize, message: &str| SliceError::Grammar { index, message: message.to_string() };
    let expect = |i: &mut usize, word: &str| -> Result<(), SliceError> {
        match tokens.get(*i) {
            Some(t) if t.eq_ignore_ascii_case(word) => {
                *i += 1;
                Ok(())
            }
            Some(t) => Err(err(*i, &format!("expected '{word}', found '{t}'"))),
            None => Err(err(*i, &format!("expected '{word}', found end of input"))),
        }
    };
    let number = |i: &mut usize| -> Result<f64, SliceError> {
        let t = tokens.get(*i).ok_or_else(|| err(*i, "expected number, found end of input"))?;
        let v = t.parse::<f64>().map_err(|_| err(*i, &format!("invalid number '{t}'")))?;
        *i += 1;
        Ok(v)
    };

    expect(&mut i, "solid")?;
    // Optional solid name runs until the first facet/endsolid keyword.
    while let Some(t) = tokens.get(i) {
        if t.eq_ignore_ascii_case("facet") || t.eq_ignore_ascii_case("endsolid") {
            break;
        }
        i += 1;
    }
    let mut triangles = Vec::new();
    loop {
        match tokens.get(i) {
            Some(t) if t.eq_ignore_ascii_case("endsolid") => break,
            Some(t) if t.eq_ignore_ascii_case("facet") => {
                i += 1;
                expect(&mut i, "normal")?;
                for _ in 0..3 {
                    number(&mut i)?;
                }
                expect(&mut i, "outer")?;
                expect(&mut i, "loop")?;
                let mut tri = [[0.0; 3]; 3];
                for v in tri.iter_mut() {
                    expect(&mut i, "vertex")?;
                    for c in v.iter_mut() {
                        *c = number(&mut i)?;
                    }
                }
                expect(&mut i, "endloop")?;
                expect(&mut i, "endfacet")?;
                triangles.push(tri);
            }
            Some(t) => return Err(err(i, &format!("expected 'facet' or 'endsolid', found '{t}'"))),
            None => return Err(err(i, "missing 'endsolid'")),
        }
    }
    Ok(triangles)
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<Triangle>, SliceError> {
    if bytes.len() < 84 {
        return Err(SliceError::BinaryLength { count: 0, expected: 84, actual: bytes.len() });
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap());
    let expected = 84 + 50 * count as usize;
    if bytes.len() != expected {
        return Err(SliceError::BinaryLength { count, expected, actual: bytes.len() });
    }
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    Ok((0..count as usize)
        .map(|k| {
            let base = 84 + 50 * k + 12; // skip the stored normal
            let mut tri = [[0.0; 3]; 3];
            for (v, vert) in tri.iter_mut().enumerate() {
                for (c, coord) in vert.iter_mut().enumerate() {
                    *coord = f(base + 12 * v + 4 * c);
                }
            }
            tri
        })
        .collect())
}

fn is_binary_layout(bytes: &[u8]) -> bool {
    bytes.len() >= 84 && {
        let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        bytes.len() == 84 + 50 * count
    }
}

/// Parses ASCII or binary STL. Stored facet normals are ignored.
pub fn parse_stl(bytes: &[u8]) -> Result<TriMesh, SliceError> {
    let starts_solid = bytes.trim_ascii_start().starts_with(b"solid");
    let triangles = if starts_solid && !is_binary_layout(bytes) {
        parse_ascii(&String::from_utf8_lossy(bytes))?
    } else {
        parse_binary(bytes)?
    };
    TriMesh::new(triangles)
}

pub fn read_stl(path: impl AsRef<Path>) -> Result<TriMesh, SliceError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| SliceError::Io { path: path.to_path_buf(), source })?;
    parse_stl(&bytes)
}

fn facet_normal(t: &Triangle) -> [f32; 3] {
    let u = [t[1][0] - t[0][0], t[1][1] - t[0][1], t[1][2] - t[0][2]];
    let v = [t[2][0] - t[0][0], t[2][1] - t[0][1], t[2][2] - t[0][2]];
    let c = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt().max(f64::MIN_POSITIVE);
    [(c[0] / n) as f32, (c[1] / n) as f32, (c[2] / n) as f32]
}

/// Binary STL encoding (single-precision coordinates).
pub fn encode_binary_stl(triangles: &[Triangle]) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out[..16].copy_from_slice(b"layerscope mesh ");
    out.extend_from_slice(&(triangles.len() as u32).to_le_bytes());
    for t in triangles {
        for c in facet_normal(t) {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for v in t {
            for &c in v {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

pub fn encode_ascii_stl(name: &str, triangles: &[Triangle]) -> String {
    let mut s = format!("solid {name}\n");
    for t in triangles {
        let n = facet_normal(t);
        let _ = writeln!(s, "  facet normal {} {} {}\n    outer loop", n[0], n[1], n[2]);
        for v in t {
            let _ = writeln!(s, "      vertex {} {} {}", v[0], v[1], v[2]);
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(s, "endsolid {name}");
    s
}

// ------------------------------------------------------------------------
// Slicing

pub const WELD_TOLERANCE: f64 = 1e-6;
const VERTEX_CLEARANCE: f64 = 1e-9;
const PLANE_NUDGE: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub points: Vec<Point2>,
}

impl Contour {
    pub fn new(points: Vec<Point2>) -> Self {
        Self { points }
    }

    pub fn is_ccw(&self) -> bool {
        contour_area(self) > 0.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Contour {
        Contour { points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect() }
    }

    pub fn scaled(&self, s: f64) -> Contour {
        Contour { points: self.points.iter().map(|p| [p[0] * s, p[1] * s]).collect() }
    }
}

/// Shoelace area; positive for counter-clockwise contours.
pub fn contour_area(c: &Contour) -> f64 {
    let n = c.points.len();
    let mut twice = 0.0;
    for i in 0..n {
        let a = c.points[i];
        let b = c.points[(i + 1) % n];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    twice / 2.0
}

/// Even-odd containment test.
pub fn point_in_contour(p: Point2, c: &Contour) -> bool {
    let n = c.points.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (c.points[i], c.points[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn lex_less(a: &Point3, b: &Point3) -> bool {
    a.partial_cmp(b) == Some(std::cmp::Ordering::Less)
}

/// Intersection of edge `(a, b)` with the plane. Endpoints are put in a
/// canonical order first so neighbouring facets produce bit-identical points.
fn edge_crossing(a: &Point3, b: &Point3, z: f64) -> Point2 {
    let (p, q) = if lex_less(a, b) { (a, b) } else { (b, a) };
    let t = (z - p[2]) / (q[2] - p[2]);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn plane_clear_of_vertices(mesh: &TriMesh, z: f64) -> f64 {
    let mut z = z;
    // A handful of nudges always suffices for finite meshes in practice.
    for _ in 0..64 {
        let hit = mesh.triangles.iter().flatten().any(|v| (v[2] - z).abs() < VERTEX_CLEARANCE);
        if !hit {
            break;
        }
        z += PLANE_NUDGE;
    }
    z
}

struct Welder {
    cells: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Point2>,
}

impl Welder {
    fn new() -> Self {
        Self { cells: HashMap::new(), points: Vec::new() }
    }

    fn key(p: Point2) -> (i64, i64) {
        ((p[0] / WELD_TOLERANCE).floor() as i64, (p[1] / WELD_TOLERANCE).floor() as i64)
    }

    fn id(&mut self, p: Point2) -> usize {
        let (kx, ky) = Self::key(p);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(ids) = self.cells.get(&(kx + dx, ky + dy)) {
                    for &id in ids {
                        let q = self.points[id];
                        let d = (q[0] - p[0]).hypot(q[1] - p[1]);
                        if d <= WELD_TOLERANCE && best.map_or(true, |(_, bd)| d < bd) {
                            best = Some((id, d));
                        }
                    }
                }
            }
        }
        if let Some((id, _)) = best {
            return id;
        }
        let id = self.points.len();
        self.points.push(p);
        self.cells.entry((kx, ky)).or_default().push(id);
        id
    }
}

/// Points closer than this to the chord joining their neighbours are dropped.
const COLLINEAR_TOLERANCE: f64 = 1e-9;

fn remove_collinear(points: &mut Vec<Point2>) {
    loop {
        let n = points.len();
        if n <= 3 {
            return;
        }
        let victim = (0..n).find(|&i| {
            let a = points[(i + n - 1) % n];
            let p = points[i];
            let b = points[(i + 1) % n];
            let u = [p[0] - a[0], p[1] - a[1]];
            let v = [b[0] - p[0], b[1] - p[1]];
            let w = [b[0] - a[0], b[1] - a[1]];
            let len = w[0].hypot(w[1]);
            let between = u[0] * w[0] + u[1] * w[1] > 0.0 && v[0] * w[0] + v[1] * w[1] > 0.0;
            between && (u[0] * w[1] - u[1] * w[0]).abs() <= COLLINEAR_TOLERANCE * len
        });
        match victim {
            Some(i) => {
                points.remove(i);
            }
            None => return,
        }
    }
}

/// Rotates a closed polyline so it starts at its lexicographically smallest point.
fn canonical_start(points: &mut [Point2]) {
    if let Some((start, _)) = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
    {
        points.rotate_left(start);
    }
}

/// Cross-section of the mesh at height `z`.
pub fn slice_mesh(mesh: &TriMesh, z: f64) -> Result<Vec<Contour>, SliceError> {
    let b = mesh.bounds;
    if !(z > b.min[2] && z < b.max[2]) {
        return Err(SliceError::PlaneOutside { z, min: b.min[2], max: b.max[2] });
    }
    let z_plane = plane_clear_of_vertices(mesh, z);

    let mut welder = Welder::new();
    let mut edges: Vec<(usize, usize)> = Vec::new();
    for t in &mesh.triangles {
        let above = t.map(|v| v[2] > z_plane);
        let n_above = above.iter().filter(|&&a| a).count();
        if n_above == 0 || n_above == 3 {
            continue;
        }
        let mut hits = Vec::with_capacity(2);
        for k in 0..3 {
            let (a, c) = (&t[k], &t[(k + 1) % 3]);
            if above[k] != above[(k + 1) % 3] {
                hits.push(edge_crossing(a, c, z_plane));
            }
        }
        let (ia, ib) = (welder.id(hits[0]), welder.id(hits[1]));
        if ia != ib {
            edges.push((ia.min(ib), ia.max(ib)));
        }
    }

    // Undirected walk over segment endpoints.
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); welder.points.len()];
    for (e, &(a, c)) in edges.iter().enumerate() {
        incident[a].push(e);
        incident[c].push(e);
    }
    let mut used = vec![false; edges.len()];
    let mut loops: Vec<Vec<Point2>> = Vec::new();
    for start_edge in 0..edges.len() {
        if used[start_edge] {
            continue;
        }
        used[start_edge] = true;
        let (start, mut current) = edges[start_edge];
        let mut ids = vec![start];
        while current != start {
            ids.push(current);
            let next = incident[current].iter().copied().find(|&e| !used[e]);
            let Some(e) = next else {
                return Err(SliceError::OpenChain { z });
            };
            used[e] = true;
            let (a, c) = edges[e];
            current = if a == current { c } else { a };
        }
        if ids.len() < 3 {
            continue;
        }
        let mut pts: Vec<Point2> = ids.iter().map(|&i| welder.points[i]).collect();
        remove_collinear(&mut pts);
        if pts.len() >= 3 {
            loops.push(pts);
        }
    }

    let mut contours: Vec<Contour> = loops.into_iter().map(Contour::new).collect();
    // Nesting depth parity decides orientation.
    let depths: Vec<usize> = (0..contours.len())
        .map(|i| {
            let probe = contours[i].points[0];
            (0..contours.len()).filter(|&j| j != i && point_in_contour(probe, &contours[j])).count()
        })
        .collect();
    for (c, depth) in contours.iter_mut().zip(depths) {
        let want_ccw = depth % 2 == 0;
        if c.is_ccw() != want_ccw {
            c.points.reverse();
        }
        canonical_start(&mut c.points);
    }
    contours.sort_by(|a, b| a.points[0].partial_cmp(&b.points[0]).unwrap_or(std::cmp::Ordering::Equal));
    Ok(contours)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub z: f64,
    pub contours: Vec<Contour>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceStack {
    pub layer_height: f64,
    /// XY footprint of the sliced mesh.
    pub bounds: Bounds,
    pub layers: Vec<Layer>,
}

impl SliceStack {
    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

/// Slices at layer mid-planes `z_min + (k + 0.5) h`.
pub fn slice_job(mesh: &TriMesh, layer_height: f64) -> Result<SliceStack, SliceError> {
    if !(layer_height > 0.0) || !layer_height.is_finite() {
        return Err(SliceError::LayerHeight(layer_height));
    }
    let b = mesh.bounds;
    let extent = b.max[2] - b.min[2];
    let count = (extent / layer_height + 1e-9).floor() as usize;
    if count == 0 {
        return Err(SliceError::NoLayers { layer_height, extent });
    }
    let layers = (0..count)
        .map(|k| {
            let z = b.min[2] + (k as f64 + 0.5) * layer_height;
            Ok(Layer { z, contours: slice_mesh(mesh, z)? })
        })
        .collect::<Result<Vec<_>, SliceError>>()?;
    Ok(SliceStack { layer_height, bounds: b, layers })
}

// ------------------------------------------------------------------------
// SVG

fn fmt_num(v: f64) -> String {
    // Shortest representation that round-trips exactly.
    let s = format!("{v}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

/// One `<path>` per contour, coordinates `(p - bounds.min) * scale` in pixels.
pub fn emit_layer_svg(layer: &Layer, bounds: &Bounds, scale: f64) -> String {
    let w = (bounds.max[0] - bounds.min[0]) * scale;
    let h = (bounds.max[1] - bounds.min[1]) * scale;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-z="{z}" data-origin="{ox} {oy}" data-scale="{scale}">"#,
        w = fmt_num(w),
        h = fmt_num(h),
        z = fmt_num(layer.z),
        ox = fmt_num(bounds.min[0]),
        oy = fmt_num(bounds.min[1]),
        scale = fmt_num(scale),
    );
    for c in &layer.contours {
        let mut d = String::new();
        for (i, p) in c.points.iter().enumerate() {
            let x = (p[0] - bounds.min[0]) * scale;
            let y = (p[1] - bounds.min[1]) * scale;
            let _ = write!(d, "{} {},{} ", if i == 0 { "M" } else { "L" }, fmt_num(x), fmt_num(y));
        }
        d.push('Z');
        let _ = writeln!(s, r#"  <path d="{d}" fill-rule="evenodd"/>"#);
    }
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackIndex {
    pub layer_height: f64,
    pub z_values: Vec<f64>,
}

/// Writes `layer_%04d.svg` per layer plus `stack.json`.
pub fn write_stack(stack: &SliceStack, scale: f64, dir: impl AsRef<Path>) -> Result<StackIndex, SliceError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SliceError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (k, layer) in stack.layers.iter().enumerate() {
        let path = dir.join(format!("layer_{k:04}.svg"));
        std::fs::write(&path, emit_layer_svg(layer, &stack.bounds, scale)).map_err(io(&path))?;
    }
    let index = StackIndex { layer_height: stack.layer_height, z_values: stack.layers.iter().map(|l| l.z).collect() };
    let path = dir.join("stack.json");
    std::fs::write(&path, serde_json::to_string_pretty(&index).expect("index serialises")).map_err(io(&path))?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn binary_cube_parses() {
        let bytes = encode_binary_stl(&fixtures::cube_triangles(1.0));
        let mesh = parse_stl(&bytes).unwrap();
        assert_eq!(mesh.triangles().len(), 12);
        assert_eq!(mesh.bounds(), Bounds { min: [0.0; 3], max: [1.0; 3] });
    }

    #[test]
    fn ascii_single_facet() {
        let text = "solid one\n facet normal 0 0 1\n  outer loop\n   vertex 0 0 0\n   vertex 1 0 0\n   vertex 0 1 0\n  endloop\n endfacet\nendsolid one\n";
        assert_eq!(parse_stl(text.as_bytes()).unwrap().triangles().len(), 1);
        let round = encode_ascii_stl("cube", &fixtures::cube_triangles(2.0));
        assert_eq!(parse_stl(round.as_bytes()).unwrap().triangles().len(), 12);
    }

    #[test]
    fn malformed_inputs() {
        let mut bytes = encode_binary_stl(&fixtures::cube_triangles(1.0));
        bytes.truncate(bytes.len() - 7);
        assert!(matches!(parse_stl(&bytes), Err(SliceError::BinaryLength { count: 12, .. })));
        let bad = "solid x\n facet normal 0 0 1\n outer loop\n vertex 0 0\n";
        assert!(matches!(parse_stl(bad.as_bytes()), Err(SliceError::Grammar { .. })));
        let degenerate = [[[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]];
        assert!(matches!(
            parse_stl(&encode_binary_stl(&degenerate)),
            Err(SliceError::Empty { dropped: 1 })
        ));
    }

    #[test]
    fn degenerate_facets_are_counted() {
        let mut tris = fixtures::cube_triangles(1.0);
        tris.push([[0.0; 3], [0.0; 3], [1.0, 1.0, 1.0]]);
        let mesh = TriMesh::new(tris).unwrap();
        assert_eq!(mesh.dropped_degenerate(), 1);
        assert_eq!(mesh.triangles().len(), 12);
    }

    #[test]
    fn shoelace_cases() {
        let ccw = Contour::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        assert_eq!(contour_area(&ccw), 1.0);
        let mut cw = ccw.clone();
        cw.points.reverse();
        assert_eq!(contour_area(&cw), -1.0);
        let tri = Contour::new(vec![[0.0, 0.0], [0.5, 0.0], [0.0, 0.5]]);
        assert_eq!(contour_area(&tri), 0.125);
    }

    #[test]
    fn cube_section_is_unit_square() {
        let mesh = TriMesh::new(fixtures::cube_triangles(1.0)).unwrap();
        let cs = slice_mesh(&mesh, 0.5).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].points.len(), 4);
        assert!((contour_area(&cs[0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tetrahedron_section() {
        let mesh = TriMesh::new(fixtures::tetrahedron_triangles()).unwrap();
        let cs = slice_mesh(&mesh, 0.5).unwrap();
        assert_eq!(cs.len(), 1);
        assert!((contour_area(&cs[0]) - 0.125).abs() < 1e-12);
        let mut pts = cs[0].points.clone();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = [[0.0, 0.0], [0.0, 0.5], [0.5, 0.0]];
        for (p, q) in pts.iter().zip(want) {
            assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn missing_face_is_an_open_chain() {
        let mut tris = fixtures::cube_triangles(1.0);
        // Drop both triangles of the x = 0 face.
        tris.retain(|t| !t.iter().all(|v| v[0] == 0.0));
        assert_eq!(tris.len(), 10);
        let mesh = TriMesh::new(tris).unwrap();
        assert!(matches!(slice_mesh(&mesh, 0.5), Err(SliceError::OpenChain { .. })));
    }

    #[test]
    fn plane_outside_mesh() {
        let mesh = TriMesh::new(fixtures::cube_triangles(1.0)).unwrap();
        assert!(matches!(slice_mesh(&mesh, 1.0), Err(SliceError::PlaneOutside { .. })));
        assert!(slice_mesh(&mesh, -0.1).is_err());
    }

    #[test]
    fn vertex_plane_is_nudged() {
        let mesh = TriMesh::new(fixtures::octahedron_triangles()).unwrap();
        // The equator holds four vertices exactly.
        let cs = slice_mesh(&mesh, 0.0).unwrap();
        assert_eq!(cs.len(), 1);
        assert!((contour_area(&cs[0]) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn job_layers() {
        let mesh = TriMesh::new(fixtures::cube_triangles(1.0)).unwrap();
        let stack = slice_job(&mesh, 0.25).unwrap();
        assert_eq!(stack.len(), 4);
        let zs: Vec<f64> = stack.layers.iter().map(|l| l.z).collect();
        assert_eq!(zs, vec![0.125, 0.375, 0.625, 0.875]);
        for l in &stack.layers {
            assert_eq!(l.contours.len(), 1);
            assert!((contour_area(&l.contours[0]) - 1.0).abs() < 1e-12);
        }
        assert!(matches!(slice_job(&mesh, 2.0), Err(SliceError::NoLayers { .. })));
        assert!(matches!(slice_job(&mesh, 0.0), Err(SliceError::LayerHeight(_))));
    }

    #[test]
    fn sphere_area_peaks_at_equator() {
        let mesh = TriMesh::new(fixtures::uv_sphere_triangles(1.0, 48, 24)).unwrap();
        let stack = slice_job(&mesh, 0.1).unwrap();
        assert_eq!(stack.len(), 20);
        let areas: Vec<f64> = stack.layers.iter().map(|l| l.contours.iter().map(contour_area).sum()).collect();
        let peak = areas.iter().cloned().fold(f64::MIN, f64::max);
        let at = areas.iter().position(|&a| a == peak).unwrap();
        assert!(at == 9 || at == 10, "peak at layer {at}");
        for k in 0..9 {
            assert!(areas[k] < areas[k + 1]);
            assert!(areas[19 - k] < areas[18 - k]);
        }
    }

    #[test]
    fn torus_has_a_hole() {
        let mesh = TriMesh::new(fixtures::torus_triangles(2.0, 0.5, 48, 24)).unwrap();
        let cs = slice_mesh(&mesh, 0.01).unwrap();
        assert_eq!(cs.len(), 2);
        let ccw = cs.iter().filter(|c| c.is_ccw()).count();
        assert_eq!(ccw, 1, "one outer boundary, one hole");
    }

    #[test]
    fn svg_shapes() {
        let bounds = Bounds { min: [0.0; 3], max: [1.0; 3] };
        let empty = emit_layer_svg(&Layer { z: 0.5, contours: vec![] }, &bounds, 100.0);
        assert!(empty.starts_with("<svg") && empty.trim_end().ends_with("</svg>"));
        assert_eq!(empty.matches("<path").count(), 0);

        let sq = Contour::new(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]);
        let svg = emit_layer_svg(&Layer { z: 0.5, contours: vec![sq] }, &bounds, 100.0);
        assert_eq!(svg.matches("<path").count(), 1);
        assert!(svg.contains(r#"d="M 0,0 L 100,0 L 100,100 L 0,100 Z""#), "{svg}");
        assert!(svg.contains(r#"fill-rule="evenodd""#));
        assert!(svg.contains(r#"width="100" height="100""#));
    }
}
