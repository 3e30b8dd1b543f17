//! Triangle meshes, oriented surface samples and model statistics.
//!
//! Geometry is kept in the unit of the input file. Readers cover ASCII and
//! binary little-endian PLY (`vertex` / `face` elements) and ASCII OBJ
//! (`v`, `vn`, `f` records).

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kdtree::KdTree;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("mesh has no usable triangles")]
    Empty,
    #[error("mesh has zero total surface area")]
    ZeroArea,
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeshFormat {
    Ply,
    Obj,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(MeshFormat::Ply),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

/// Indexed triangle mesh with one unit normal per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vector3<f64>>,
    dropped_degenerate: usize,
}

impl SurfaceMesh {
    /// Validates indices, drops zero-area triangles and computes
    /// area-weighted vertex normals when `normals` is `None`.
    pub fn new(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self, MeshError> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i as usize >= n) {
                return Err(MeshError::Parse(format!(
                    "triangle {t} references vertex {bad} but only {n} vertices exist"
                )));
            }
        }
        if let Some(ns) = &normals {
            if ns.len() != n {
                return Err(MeshError::Parse(format!(
                    "{} normals for {n} vertices",
                    ns.len()
                )));
            }
        }

        let before = triangles.len();
        let triangles: Vec<[u32; 3]> = triangles
            .into_iter()
            .filter(|t| triangle_area(&vertices, t) > 0.0)
            .collect();
        let dropped_degenerate = before - triangles.len();
        if dropped_degenerate > 0 {
            log::warn!("dropped {dropped_degenerate} zero-area triangles");
        }
        if triangles.is_empty() {
            return Err(MeshError::Empty);
        }

        let normals = match normals {
            Some(ns) => ns,
            None => area_weighted_normals(&vertices, &triangles),
        };
        Ok(Self {
            vertices,
            triangles,
            normals,
            dropped_degenerate,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    /// Number of zero-area triangles removed at construction.
    pub fn dropped_degenerate(&self) -> usize {
        self.dropped_degenerate
    }

    pub fn triangle_points(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        triangle_area(&self.vertices, &self.triangles[t])
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Unit geometric normal of triangle `t` following its winding.
    pub fn face_normal(&self, t: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle_points(t);
        (b - a).cross(&(c - a)).normalize()
    }

    /// Vertex normal interpolated with barycentric weights and renormalized.
    /// Falls back to the face normal when the interpolation cancels out.
    pub fn interpolated_normal(&self, t: usize, bary: [f64; 3]) -> Vector3<f64> {
        let tri = self.triangles[t];
        let n = self.normals[tri[0] as usize] * bary[0]
            + self.normals[tri[1] as usize] * bary[1]
            + self.normals[tri[2] as usize] * bary[2];
        let len = n.norm();
        if len > 1e-12 {
            n / len
        } else {
            self.face_normal(t)
        }
    }

    pub fn bounding_box(&self) -> (Point3<f64>, Point3<f64>) {
        bounds(self.vertices.iter())
    }

    /// Writes the mesh as ASCII OBJ with vertex normals (debug dumps).
    pub fn write_obj(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for v in &self.vertices {
            writeln!(out, "v {} {} {}", v.x, v.y, v.z)?;
        }
        for n in &self.normals {
            writeln!(out, "vn {} {} {}", n.x, n.y, n.z)?;
        }
        for t in &self.triangles {
            let [a, b, c] = [t[0] + 1, t[1] + 1, t[2] + 1];
            writeln!(out, "f {a}//{a} {b}//{b} {c}//{c}")?;
        }
        out.flush()
    }
}

fn triangle_area(vertices: &[Point3<f64>], t: &[u32; 3]) -> f64 {
    let a = vertices[t[0] as usize];
    let b = vertices[t[1] as usize];
    let c = vertices[t[2] as usize];
    0.5 * (b - a).cross(&(c - a)).norm()
}

fn area_weighted_normals(vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for t in triangles {
        let a = vertices[t[0] as usize];
        let b = vertices[t[1] as usize];
        let c = vertices[t[2] as usize];
        // cross product length is twice the area
        let n = (b - a).cross(&(c - a));
        for &i in t {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 {
                n / len
            } else {
                Vector3::z()
            }
        })
        .collect()
}

fn bounds<'a>(points: impl Iterator<Item = &'a Point3<f64>>) -> (Point3<f64>, Point3<f64>) {
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    (lo, hi)
}

/// An oriented point on the surface of a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSample {
    pub position: Point3<f64>,
    pub normal: Vector3<f64>,
    pub triangle: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelStats {
    pub diameter: f64,
    pub sample_count: usize,
    pub bbox_min: Point3<f64>,
    pub bbox_max: Point3<f64>,
}

pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<SurfaceMesh, MeshError> {
    let bytes = fs::read(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    match format {
        MeshFormat::Ply => crate::ply::parse_ply(&bytes),
        MeshFormat::Obj => parse_obj(
            std::str::from_utf8(&bytes).map_err(|e| MeshError::Parse(format!("obj: {e}")))?,
        ),
    }
}

pub fn parse_obj(text: &str) -> Result<SurfaceMesh, MeshError> {
    let mut vertices = Vec::new();
    let mut file_normals: Vec<Vector3<f64>> = Vec::new();
    let mut triangles = Vec::new();
    // normal index referenced by each vertex, from face records
    let mut vertex_normal: Vec<Option<usize>> = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let err = |msg: &str| MeshError::Parse(format!("obj line {}: {msg}", lineno + 1));
        match tag {
            "v" | "vn" => {
                let xs: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| err(&e.to_string()))?;
                if xs.len() != 3 {
                    return Err(err("expected three coordinates"));
                }
                if tag == "v" {
                    vertices.push(Point3::new(xs[0], xs[1], xs[2]));
                    vertex_normal.push(None);
                } else {
                    file_normals.push(Vector3::new(xs[0], xs[1], xs[2]));
                }
            }
            "f" => {
                let mut corners = Vec::new();
                for token in parts {
                    let mut fields = token.split('/');
                    let v = resolve_obj_index(fields.next().unwrap_or(""), vertices.len())
                        .ok_or_else(|| err(&format!("bad vertex reference {token:?}")))?;
                    let _texcoord = fields.next();
                    let vn = match fields.next() {
                        Some(s) if !s.is_empty() => Some(
                            resolve_obj_index(s, file_normals.len())
                                .ok_or_else(|| err(&format!("bad normal reference {token:?}")))?,
                        ),
                        _ => None,
                    };
                    if let Some(vn) = vn {
                        vertex_normal[v].get_or_insert(vn);
                    }
                    corners.push(v as u32);
                }
                if corners.len() < 3 {
                    return Err(err("face with fewer than three vertices"));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    if vertices.is_empty() || triangles.is_empty() {
        return Err(MeshError::Empty);
    }
    let normals = if !file_normals.is_empty() && vertex_normal.iter().all(Option::is_some) {
        Some(
            vertex_normal
                .iter()
                .map(|i| file_normals[i.expect("checked")])
                .collect(),
        )
    } else {
        None
    };
    SurfaceMesh::new(vertices, triangles, normals)
}

/// OBJ indices are 1-based; negative values count back from the end.
fn resolve_obj_index(s: &str, len: usize) -> Option<usize> {
    let i: i64 = s.parse().ok()?;
    let idx = if i > 0 {
        i - 1
    } else if i < 0 {
        len as i64 + i
    } else {
        return None;
    };
    (0..len as i64).contains(&idx).then_some(idx as usize)
}

/// Area-uniform surface sampling: a triangle is picked with probability
/// proportional to its area, then a uniform barycentric point inside it.
pub fn sample_surface(
    mesh: &SurfaceMesh,
    count: usize,
    seed: u64,
) -> Result<Vec<PointSample>, MeshError> {
    if count == 0 {
        return Err(MeshError::NoSamples);
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cdf.push(total);
    }
    if !(total > 0.0) {
        return Err(MeshError::ZeroArea);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let t = cdf.partition_point(|&c| c <= target).min(cdf.len() - 1);
        let r1: f64 = rng.random();
        let r2: f64 = rng.random();
        let s = r1.sqrt();
        let bary = [1.0 - s, s * (1.0 - r2), s * r2];
        let [a, b, c] = mesh.triangle_points(t);
        let position = Point3::from(a.coords * bary[0] + b.coords * bary[1] + c.coords * bary[2]);
        out.push(PointSample {
            position,
            normal: mesh.interpolated_normal(t, bary),
            triangle: t as u32,
        });
    }
    Ok(out)
}

/// Samples within `radius` of `center`, in index order. Linear scan.
pub fn radius_neighbors(samples: &[PointSample], center: &Point3<f64>, radius: f64) -> Vec<PointSample> {
    let c = center.coords.as_slice();
    let r2 = radius * radius;
    samples
        .iter()
        .filter(|s| crate::kdtree::sq_dist(s.position.coords.as_slice(), c) <= r2)
        .copied()
        .collect()
}

/// Exact maximum pairwise distance (quadratic scan).
pub fn model_diameter(samples: &[PointSample]) -> Result<f64, MeshError> {
    let points: Vec<Point3<f64>> = samples.iter().map(|s| s.position).collect();
    point_diameter(&points)
}

pub fn point_diameter(points: &[Point3<f64>]) -> Result<f64, MeshError> {
    if points.len() < 2 {
        return Err(MeshError::TooFewSamples {
            needed: 2,
            got: points.len(),
        });
    }
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    Ok(best.sqrt())
}

pub fn model_stats(samples: &[PointSample]) -> Result<ModelStats, MeshError> {
    let diameter = model_diameter(samples)?;
    let (bbox_min, bbox_max) = bounds(samples.iter().map(|s| &s.position));
    Ok(ModelStats {
        diameter,
        sample_count: samples.len(),
        bbox_min,
        bbox_max,
    })
}

/// Sample positions with a 3-D tree for fixed-radius and nearest queries.
#[derive(Debug, Clone)]
pub struct SampleCloud {
    tree: KdTree,
}

impl SampleCloud {
    pub fn new(samples: &[PointSample]) -> Self {
        let flat: Vec<f64> = samples
            .iter()
            .flat_map(|s| [s.position.x, s.position.y, s.position.z])
            .collect();
        Self {
            tree: KdTree::new(3, flat),
        }
    }

    pub fn from_points(points: &[Point3<f64>]) -> Self {
        let flat: Vec<f64> = points.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        Self {
            tree: KdTree::new(3, flat),
        }
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    /// Indices of samples within `radius` of `center`, ascending.
    pub fn within(&self, center: &Point3<f64>, radius: f64) -> Vec<usize> {
        self.tree.within(center.coords.as_slice(), radius * radius)
    }

    /// Index and squared distance of the closest sample.
    pub fn nearest(&self, point: &Point3<f64>) -> Option<(usize, f64)> {
        self.tree.nearest(point.coords.as_slice())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> SurfaceMesh {
        SurfaceMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap()
    }

    const CUBE_OBJ: &str = "\
v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nv 0 0 1\nv 1 0 1\nv 1 1 1\nv 0 1 1
f 1 3 2\nf 1 4 3\nf 5 6 7\nf 5 7 8\nf 1 2 6\nf 1 6 5
f 2 3 7\nf 2 7 6\nf 3 4 8\nf 3 8 7\nf 4 1 5\nf 4 5 8
";

    #[test]
    fn cube_obj_reads_back() {
        let mesh = parse_obj(CUBE_OBJ).unwrap();
        assert_eq!(mesh.vertices().len(), 8);
        assert_eq!(mesh.triangles().len(), 12);
        for n in mesh.normals() {
            assert!((n.norm() - 1.0).abs() < 1e-6);
        }
        // corner normals point away from the centre for an outward-wound cube
        let centre = Point3::new(0.5, 0.5, 0.5);
        for (v, n) in mesh.vertices().iter().zip(mesh.normals()) {
            assert!((v - centre).dot(n) > 0.0);
        }
    }

    #[test]
    fn obj_explicit_normals_pass_through() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\n\
vn 0.1 0.2 0.3\nvn -1 0 0\nvn 0 -1 0\nvn 0.577 0.577 0.577\n\
f 1//1 3//1 2//1\nf 1//1 2//1 4//4\nf 1//1 4//4 3//1\nf 2//2 3//3 4//4\n";
        let mesh = parse_obj(text).unwrap();
        assert_eq!(mesh.normals()[0], Vector3::new(0.1, 0.2, 0.3));
        assert_eq!(mesh.normals()[3], Vector3::new(0.577, 0.577, 0.577));
    }

    #[test]
    fn obj_negative_indices_and_quads() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n";
        let mesh = parse_obj(text).unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn obj_out_of_range_is_parse_error() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n").unwrap_err();
        assert!(matches!(err, MeshError::Parse(_)));
    }

    #[test]
    fn degenerate_triangles_dropped() {
        let mesh = SurfaceMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 1, 3]],
            None,
        )
        .unwrap();
        assert_eq!(mesh.triangles().len(), 1);
        assert_eq!(mesh.dropped_degenerate(), 1);

        let all_degenerate = SurfaceMesh::new(
            vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
            None,
        );
        assert!(matches!(all_degenerate, Err(MeshError::Empty)));
    }

    #[test]
    fn quadrant_fractions_are_uniform() {
        let samples = sample_surface(&unit_square(), 10_000, 3).unwrap();
        let mut counts = [0usize; 4];
        for s in &samples {
            let q = (s.position.x >= 0.5) as usize + 2 * (s.position.y >= 0.5) as usize;
            counts[q] += 1;
        }
        for c in counts {
            let frac = c as f64 / samples.len() as f64;
            assert!((frac - 0.25).abs() <= 0.02, "quadrant fraction {frac}");
        }
    }

    #[test]
    fn single_sample_lies_in_triangle() {
        let mesh = SurfaceMesh::new(
            vec![Point3::new(0.0, 0.0, 1.0), Point3::new(2.0, 0.0, 1.0), Point3::new(0.0, 3.0, 1.0)],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let s = sample_surface(&mesh, 1, 11).unwrap();
        assert_eq!(s.len(), 1);
        let p = s[0].position;
        assert!((p.z - 1.0).abs() < 1e-12);
        assert!(p.x >= 0.0 && p.y >= 0.0 && p.x / 2.0 + p.y / 3.0 <= 1.0 + 1e-12);
        assert!((s[0].normal.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_is_deterministic() {
        let mesh = unit_square();
        assert_eq!(sample_surface(&mesh, 500, 9).unwrap(), sample_surface(&mesh, 500, 9).unwrap());
        assert_ne!(sample_surface(&mesh, 500, 9).unwrap(), sample_surface(&mesh, 500, 10).unwrap());
        assert!(matches!(sample_surface(&mesh, 0, 1), Err(MeshError::NoSamples)));
    }

    #[test]
    fn diameter_examples() {
        let two = [
            PointSample { position: Point3::new(0.0, 0.0, 0.0), normal: Vector3::z(), triangle: 0 },
            PointSample { position: Point3::new(3.0, 4.0, 0.0), normal: Vector3::z(), triangle: 0 },
        ];
        assert_eq!(model_diameter(&two).unwrap(), 5.0);
        assert!(model_diameter(&two[..1]).is_err());

        let corners: Vec<PointSample> = (0..8)
            .map(|i| PointSample {
                position: Point3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64),
                normal: Vector3::z(),
                triangle: 0,
            })
            .collect();
        assert!((model_diameter(&corners).unwrap() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn isolated_sample_neighborhood() {
        let samples: Vec<PointSample> = (0..5)
            .map(|i| PointSample {
                position: Point3::new(i as f64, 0.0, 0.0),
                normal: Vector3::z(),
                triangle: 0,
            })
            .collect();
        let hit = radius_neighbors(&samples, &Point3::new(2.0, 0.0, 0.0), 0.5);
        assert_eq!(hit.len(), 1);
        assert_eq!(hit[0].position.x, 2.0);
        assert_eq!(radius_neighbors(&samples, &Point3::origin(), 10.0).len(), 5);
    }
}
