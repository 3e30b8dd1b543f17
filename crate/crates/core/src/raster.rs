//! Deterministic z-buffer rasteriser and per-pixel scene maps.
//!
//! Pixels are sampled at their centres (integer coordinates) with a top-left
//! fill rule, depth is camera-z interpolated perspective-correctly, and no
//! back-face culling is performed. Triangles crossing the near plane are
//! clipped against it.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Point2, Point3};
use thiserror::Error;

use crate::camera::{CameraIntrinsics, Pose};
use crate::mesh::SurfaceMesh;

pub const DEFAULT_NEAR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad depth file: {0}")]
    Format(String),
}

/// Binary per-pixel mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    pub width: u32,
    pub height: u32,
    pub data: Vec<bool>,
}

impl PixelMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.data[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn same_shape(&self, other: &PixelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Inclusive pixel bounds `(x0, y0, x1, y1)` of the set pixels.
    pub fn bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bb: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) {
                    bb = Some(match bb {
                        None => (x, y, x, y),
                        Some((a, b, c, d)) => (a.min(x), b.min(y), c.max(x), d.max(y)),
                    });
                }
            }
        }
        bb
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width as usize;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i % w) as u32, (i / w) as u32))
    }
}

/// `|a ∩ b| / |a ∪ b|`, zero when both are empty.
pub fn iou(a: &PixelMask, b: &PixelMask) -> Result<f64, RasterError> {
    if !a.same_shape(b) {
        return Err(RasterError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.data.iter().zip(&b.data) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// Dense render output: camera-z depth, instance id, object-frame point and
/// triangle index per pixel.
#[derive(Debug, Clone)]
pub struct SceneMaps {
    pub width: u32,
    pub height: u32,
    /// `+inf` on background.
    pub depth: Vec<f64>,
    /// 0 on background.
    pub instance: Vec<u32>,
    /// NaN on background.
    pub object_points: Vec<Point3<f64>>,
    /// `u32::MAX` on background.
    pub triangle: Vec<u32>,
}

impl PartialEq for SceneMaps {
    /// Bitwise on floats, so NaN background points compare equal.
    fn eq(&self, other: &Self) -> bool {
        let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        self.width == other.width
            && self.height == other.height
            && same(&self.depth, &other.depth)
            && self.instance == other.instance
            && self.triangle == other.triangle
            && self.object_points.len() == other.object_points.len()
            && self
                .object_points
                .iter()
                .zip(&other.object_points)
                .all(|(p, q)| same(p.coords.as_slice(), q.coords.as_slice()))
    }
}

impl SceneMaps {
    pub fn new(width: u32, height: u32) -> Self {
        let n = width as usize * height as usize;
        Self {
            width,
            height,
            depth: vec![f64::INFINITY; n],
            instance: vec![0; n],
            object_points: vec![Point3::new(f64::NAN, f64::NAN, f64::NAN); n],
            triangle: vec![u32::MAX; n],
        }
    }

    pub fn for_camera(cam: &CameraIntrinsics) -> Self {
        Self::new(cam.width, cam.height)
    }

    pub fn foreground(&self) -> PixelMask {
        PixelMask {
            width: self.width,
            height: self.height,
            data: self.instance.iter().map(|&i| i != 0).collect(),
        }
    }

    pub fn depth_map(&self) -> DepthMap {
        DepthMap {
            width: self.width,
            height: self.height,
            data: self.depth.iter().map(|&d| d as f32).collect(),
        }
    }
}

pub fn mask_of(maps: &SceneMaps, instance: u32) -> PixelMask {
    PixelMask {
        width: maps.width,
        height: maps.height,
        data: maps.instance.iter().map(|&i| i == instance).collect(),
    }
}

/// Renders `mesh` under `pose` into `target`, keeping the nearer surface.
pub fn render(
    mesh: &SurfaceMesh,
    pose: &Pose,
    cam: &CameraIntrinsics,
    instance: u32,
    target: &mut SceneMaps,
) -> Result<(), RasterError> {
    if target.width != cam.width || target.height != cam.height {
        return Err(RasterError::DimensionMismatch(target.width, target.height, cam.width, cam.height));
    }
    let cam_vertices: Vec<Point3<f64>> = mesh.vertices().iter().map(|v| pose.transform(v)).collect();
    let window = Window::full(cam);
    let SceneMaps {
        depth,
        instance: ids,
        object_points,
        triangle,
        ..
    } = target;
    rasterize(
        &cam_vertices,
        mesh.triangles(),
        cam,
        &window,
        DEFAULT_NEAR,
        depth,
        |idx, _z, tri, bary| {
            let [a, b, c] = mesh.triangles()[tri as usize];
            let v = mesh.vertices();
            ids[idx] = instance;
            triangle[idx] = tri;
            object_points[idx] = Point3::from(
                v[a as usize].coords * bary[0] + v[b as usize].coords * bary[1] + v[c as usize].coords * bary[2],
            );
        },
    );
    Ok(())
}

/// Axis-aligned pixel window `[x0, x0 + w) x [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: i64,
    pub y0: i64,
    pub w: usize,
    pub h: usize,
}

impl Window {
    pub fn full(cam: &CameraIntrinsics) -> Self {
        Self {
            x0: 0,
            y0: 0,
            w: cam.width as usize,
            h: cam.height as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.w * self.h
    }

    pub fn intersect(&self, other: &Window) -> Window {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = (self.x0 + self.w as i64).min(other.x0 + other.w as i64);
        let y1 = (self.y0 + self.h as i64).min(other.y0 + other.h as i64);
        if x1 <= x0 || y1 <= y0 {
            return Window { x0: 0, y0: 0, w: 0, h: 0 };
        }
        Window {
            x0,
            y0,
            w: (x1 - x0) as usize,
            h: (y1 - y0) as usize,
        }
    }

    pub fn contains(&self, other: &Window) -> bool {
        other.is_empty() || self.intersect(other) == *other
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Window covering the projection of `cam_points` clipped to the image;
    /// the full image if any point is at or behind the near plane.
    pub fn covering(cam_points: &[Point3<f64>], cam: &CameraIntrinsics, near: f64) -> Self {
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in cam_points {
            if !(p.z >= near) {
                return Self::full(cam);
            }
            let s = cam.project_unchecked(p);
            lo_x = lo_x.min(s.x);
            lo_y = lo_y.min(s.y);
            hi_x = hi_x.max(s.x);
            hi_y = hi_y.max(s.y);
        }
        let x0 = (lo_x.ceil().max(0.0)) as i64;
        let y0 = (lo_y.ceil().max(0.0)) as i64;
        let x1 = (hi_x.floor().min(cam.width as f64 - 1.0)) as i64;
        let y1 = (hi_y.floor().min(cam.height as f64 - 1.0)) as i64;
        if x1 < x0 || y1 < y0 || !lo_x.is_finite() {
            return Self { x0: 0, y0: 0, w: 0, h: 0 };
        }
        Self {
            x0,
            y0,
            w: (x1 - x0 + 1) as usize,
            h: (y1 - y0 + 1) as usize,
        }
    }
}

#[inline]
fn orient(a: &Point2<f64>, b: &Point2<f64>, p: &Point2<f64>) -> f64 {
    (a.x - p.x) * (b.y - p.y) - (a.y - p.y) * (b.x - p.x)
}

/// Top-left rule for an edge `a -> b` of a positively oriented triangle.
#[inline]
fn owns_edge(a: &Point2<f64>, b: &Point2<f64>) -> bool {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    dy < 0.0 || (dy == 0.0 && dx > 0.0)
}

#[inline]
fn covers(w: f64, owned: bool) -> bool {
    w > 0.0 || (w == 0.0 && owned)
}

/// Core scan conversion. `depth` is indexed by window-local pixel; for every
/// fragment that passes the strict depth test `fragment(idx, z, tri, bary)`
/// is called with barycentric weights relative to the original triangle.
pub(crate) fn rasterize<F>(
    cam_vertices: &[Point3<f64>],
    triangles: &[[u32; 3]],
    cam: &CameraIntrinsics,
    window: &Window,
    near: f64,
    depth: &mut [f64],
    mut fragment: F,
) where
    F: FnMut(usize, f64, u32, [f64; 3]),
{
    debug_assert_eq!(depth.len(), window.len());
    if window.is_empty() {
        return;
    }
    const IDENT: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut poly: Vec<(Point3<f64>, [f64; 3])> = Vec::with_capacity(4);
    for (t, tri) in triangles.iter().enumerate() {
        let q = [
            cam_vertices[tri[0] as usize],
            cam_vertices[tri[1] as usize],
            cam_vertices[tri[2] as usize],
        ];
        let in_front = q.iter().filter(|p| p.z >= near).count();
        if in_front == 3 {
            draw_triangle(&q, &IDENT, cam, window, depth, t as u32, &mut fragment);
        } else if in_front > 0 {
            poly.clear();
            clip_near(&q, near, &mut poly);
            for k in 1..poly.len().saturating_sub(1) {
                let sub = [poly[0].0, poly[k].0, poly[k + 1].0];
                let weights = [poly[0].1, poly[k].1, poly[k + 1].1];
                draw_triangle(&sub, &weights, cam, window, depth, t as u32, &mut fragment);
            }
        }
    }
}

fn clip_near(q: &[Point3<f64>; 3], near: f64, out: &mut Vec<(Point3<f64>, [f64; 3])>) {
    let basis = |i: usize| {
        let mut b = [0.0; 3];
        b[i] = 1.0;
        b
    };
    for i in 0..3 {
        let j = (i + 1) % 3;
        let (a, b) = (q[i], q[j]);
        let a_in = a.z >= near;
        let b_in = b.z >= near;
        if a_in {
            out.push((a, basis(i)));
        }
        if a_in != b_in {
            let s = (near - a.z) / (b.z - a.z);
            let p = Point3::from(a.coords + (b - a) * s);
            let mut w = [0.0; 3];
            w[i] = 1.0 - s;
            w[j] = s;
            out.push((Point3::new(p.x, p.y, near), w));
        }
    }
}

fn draw_triangle<F>(
    q: &[Point3<f64>; 3],
    weights: &[[f64; 3]; 3],
    cam: &CameraIntrinsics,
    window: &Window,
    depth: &mut [f64],
    tri: u32,
    fragment: &mut F,
) where
    F: FnMut(usize, f64, u32, [f64; 3]),
{
    let mut s = [
        cam.project_unchecked(&q[0]),
        cam.project_unchecked(&q[1]),
        cam.project_unchecked(&q[2]),
    ];
    let mut inv_z = [1.0 / q[0].z, 1.0 / q[1].z, 1.0 / q[2].z];
    let mut w = *weights;
    let mut area = orient(&s[0], &s[1], &s[2]);
    if area == 0.0 || !area.is_finite() {
        return;
    }
    if area < 0.0 {
        s.swap(1, 2);
        inv_z.swap(1, 2);
        w.swap(1, 2);
        area = -area;
    }

    let x_lo = s[0].x.min(s[1].x).min(s[2].x).ceil().max(window.x0 as f64);
    let x_hi = s[0].x.max(s[1].x).max(s[2].x).floor().min((window.x0 + window.w as i64 - 1) as f64);
    let y_lo = s[0].y.min(s[1].y).min(s[2].y).ceil().max(window.y0 as f64);
    let y_hi = s[0].y.max(s[1].y).max(s[2].y).floor().min((window.y0 + window.h as i64 - 1) as f64);
    if x_lo > x_hi || y_lo > y_hi {
        return;
    }
    let own = [owns_edge(&s[1], &s[2]), owns_edge(&s[2], &s[0]), owns_edge(&s[0], &s[1])];
    let inv_area = 1.0 / area;

    let (x_lo, x_hi, y_lo, y_hi) = (x_lo as i64, x_hi as i64, y_lo as i64, y_hi as i64);
    for py in y_lo..=y_hi {
        let row = (py - window.y0) as usize * window.w;
        for px in x_lo..=x_hi {
            let p = Point2::new(px as f64, py as f64);
            let e0 = orient(&s[1], &s[2], &p);
            let e1 = orient(&s[2], &s[0], &p);
            let e2 = orient(&s[0], &s[1], &p);
            if !(covers(e0, own[0]) && covers(e1, own[1]) && covers(e2, own[2])) {
                continue;
            }
            let l = [e0 * inv_area, e1 * inv_area, e2 * inv_area];
            let iz = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
            let z = 1.0 / iz;
            let idx = row + (px - window.x0) as usize;
            if z < depth[idx] {
                depth[idx] = z;
                let pc = [l[0] * inv_z[0] * z, l[1] * inv_z[1] * z, l[2] * inv_z[2] * z];
                let mut bary = [0.0; 3];
                for (k, b) in bary.iter_mut().enumerate() {
                    *b = pc[0] * w[0][k] + pc[1] * w[1][k] + pc[2] * w[2][k];
                }
                fragment(idx, z, tri, bary);
            }
        }
    }
}

/// 32-bit float depth raster (`+inf` on background).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
}

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

impl DepthMap {
    /// Layout: `DPTH`, u32 width, u32 height, u32 reserved, then row-major
    /// f32, all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), RasterError> {
        let mut buf = Vec::with_capacity(16 + self.data.len() * 4);
        buf.extend_from_slice(DEPTH_MAGIC);
        buf.extend_from_slice(&self.width.to_le_bytes());
        buf.extend_from_slice(&self.height.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        for d in &self.data {
            buf.extend_from_slice(&d.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, RasterError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 16 {
            return Err(RasterError::Format("truncated header".into()));
        }
        if &bytes[..4] != DEPTH_MAGIC {
            return Err(RasterError::Format("bad magic".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let (width, height) = (word(4), word(8));
        let n = width as usize * height as usize;
        let body = &bytes[16..];
        if body.len() != n * 4 {
            return Err(RasterError::Format(format!(
                "expected {} bytes of depth, found {}",
                n * 4,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { width, height, data })
    }

    pub fn write(&self, path: &Path) -> Result<(), RasterError> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self, RasterError> {
        Self::read_from(std::fs::File::open(path)?)
    }
}
