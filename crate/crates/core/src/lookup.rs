//! Exact nearest-sample queries for points lying on a mesh.
//!
//! Each triangle is cut into an `m x m` grid in barycentric coordinates.
//! For every cell the candidates are the samples inside a ball that provably
//! contains the nearest sample of any point of the cell, so a query scans a
//! short list instead of searching a grid.

use nalgebra::Point3;

use crate::grid::PointGrid;
use crate::mesh::SurfaceMesh;

const MAX_SPLITS: usize = 32;

#[derive(Debug, Clone)]
pub struct TriangleLookup {
    points: Vec<[f64; 3]>,
    splits: Vec<u32>,
    cell_base: Vec<u32>,
    /// CSR candidate lists per cell, ascending sample index.
    starts: Vec<u32>,
    items: Vec<u32>,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

impl TriangleLookup {
    pub fn new(mesh: &SurfaceMesh, samples: &[Point3<f64>]) -> Self {
        let grid = PointGrid::new(samples);
        let points: Vec<[f64; 3]> = samples.iter().map(|p| [p.x, p.y, p.z]).collect();
        let (lo, hi) = mesh.bounding_box();
        let extent = (hi - lo).norm().max(1e-12);
        // covers rounding in barycentric interpolation
        let slack = 1e-7 * extent;
        let spacing = (mesh.surface_area() / samples.len().max(1) as f64).sqrt().max(1e-12);

        let mut splits = Vec::with_capacity(mesh.triangles().len());
        let mut cell_base = Vec::with_capacity(mesh.triangles().len());
        let mut starts = vec![0u32];
        let mut items = Vec::new();
        for t in 0..mesh.triangles().len() {
            let [a, b, c] = mesh.triangle_points(t);
            let (e1, e2) = (b - a, c - a);
            let longest = e1.norm().max(e2.norm()).max((c - b).norm());
            let m = ((longest / spacing).ceil() as usize).clamp(1, MAX_SPLITS);
            splits.push(m as u32);
            cell_base.push((starts.len() - 1) as u32);
            for i in 0..m {
                for j in 0..m {
                    let corner = |di: usize, dj: usize| {
                        let p = a + e1 * ((i + di) as f64 / m as f64) + e2 * ((j + dj) as f64 / m as f64);
                        [p.x, p.y, p.z]
                    };
                    let corners = [corner(0, 0), corner(1, 0), corner(0, 1), corner(1, 1)];
                    let center = [0, 1, 2].map(|d| corners.iter().map(|c| c[d]).sum::<f64>() / 4.0);
                    let reach = corners.iter().map(|c| dist2(c, &center)).fold(0.0, f64::max).sqrt();
                    // the nearest sample to the centre bounds the nearest
                    // distance over the whole (convex) cell by its farthest corner
                    let (s0, _) = grid
                        .nearest(&Point3::new(center[0], center[1], center[2]))
                        .expect("samples are non-empty");
                    let bound = corners.iter().map(|c| dist2(c, &points[s0])).fold(0.0, f64::max).sqrt();
                    let radius = reach + bound + 2.0 * slack;
                    let mut cand = grid.within(&Point3::new(center[0], center[1], center[2]), radius);
                    cand.sort_unstable();
                    items.extend(cand.iter().map(|&k| k as u32));
                    starts.push(items.len() as u32);
                }
            }
        }
        Self {
            points,
            splits,
            cell_base,
            starts,
            items,
        }
    }

    /// Cell holding the point with barycentric weights `bary` on triangle `tri`.
    #[inline]
    pub fn cell(&self, tri: u32, bary: [f64; 3]) -> u32 {
        let m = self.splits[tri as usize] as f64;
        let top = self.splits[tri as usize] - 1;
        let i = ((bary[1] * m).floor().max(0.0) as u32).min(top);
        let j = ((bary[2] * m).floor().max(0.0) as u32).min(top);
        self.cell_base[tri as usize] + i * self.splits[tri as usize] + j
    }

    /// Nearest sample to `p`, which must lie in `cell`; lower index wins ties.
    #[inline]
    pub fn nearest(&self, cell: u32, p: &Point3<f64>) -> (usize, f64) {
        let q = [p.x, p.y, p.z];
        let mut best = (usize::MAX, f64::INFINITY);
        for &k in &self.items[self.starts[cell as usize] as usize..self.starts[cell as usize + 1] as usize] {
            let d2 = dist2(&q, &self.points[k as usize]);
            if d2 < best.1 {
                best = (k as usize, d2);
            }
        }
        best
    }

    pub fn cell_count(&self) -> usize {
        self.starts.len() - 1
    }

    pub fn mean_candidates(&self) -> f64 {
        self.items.len() as f64 / self.cell_count().max(1) as f64
    }
}
