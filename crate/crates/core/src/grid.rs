//! Uniform voxel grid for exact nearest-point lookups in 3-D.
//!
//! Used where millions of nearest queries land on or near a sampled surface
//! (pose scoring, oracle rendering, ADI). Results match a linear scan,
//! including the lower-index rule on equal distances.

use nalgebra::Point3;

use crate::kdtree::sq_dist;

const MAX_CELLS: usize = 1 << 22;

#[derive(Debug, Clone)]
pub struct PointGrid {
    points: Vec<[f64; 3]>,
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    /// CSR layout: points of cell `c` are `items[starts[c]..starts[c + 1]]`.
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl PointGrid {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let pts: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &pts {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        if pts.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let ext: Vec<f64> = (0..3).map(|d| (hi[d] - lo[d]).max(1e-12)).collect();
        let volume = ext[0] * ext[1] * ext[2];
        // about one point per cell for surface-like clouds
        let mut cell = 0.5 * (volume / pts.len().max(1) as f64).cbrt();
        cell = cell.max(ext.iter().cloned().fold(0.0, f64::max) / 1024.0).max(1e-12);
        let dims_for = |c: f64| -> [usize; 3] { [0, 1, 2].map(|d| (ext[d] / c).floor() as usize + 1) };
        let mut dims = dims_for(cell);
        while dims.iter().product::<usize>() > MAX_CELLS {
            cell *= 1.25;
            dims = dims_for(cell);
        }

        let ncells = dims.iter().product::<usize>();
        let cell_of = |p: &[f64; 3]| -> usize {
            let c: Vec<usize> = (0..3)
                .map(|d| (((p[d] - lo[d]) / cell).floor() as usize).min(dims[d] - 1))
                .collect();
            (c[2] * dims[1] + c[1]) * dims[0] + c[0]
        };
        let mut counts = vec![0u32; ncells + 1];
        let ids: Vec<usize> = pts.iter().map(cell_of).collect();
        for &c in &ids {
            counts[c + 1] += 1;
        }
        for c in 0..ncells {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; pts.len()];
        for (i, &c) in ids.iter().enumerate() {
            items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        Self {
            points: pts,
            origin: lo,
            cell,
            dims,
            starts: counts,
            items,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the closest point; lower index wins ties.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        Some(self.search(&[q.x, q.y, q.z], (usize::MAX, f64::INFINITY)))
    }

    /// Same result as [`PointGrid::nearest`], seeded with a likely candidate
    /// (for example the answer for a neighbouring query) to prune the search.
    pub fn nearest_with_hint(&self, q: &Point3<f64>, hint: usize) -> Option<(usize, f64)> {
        if hint >= self.points.len() {
            return self.nearest(q);
        }
        let q = [q.x, q.y, q.z];
        Some(self.search(&q, (hint, sq_dist(&q, &self.points[hint]))))
    }

    fn search(&self, q: &[f64; 3], mut best: (usize, f64)) -> (usize, f64) {
        let home: [i64; 3] = [0, 1, 2].map(|d| ((q[d] - self.origin[d]) / self.cell).floor() as i64);
        // rings closer than the grid box contain no cells
        let mut ring = (0..3)
            .map(|d| (-home[d]).max(home[d] - (self.dims[d] as i64 - 1)).max(0))
            .max()
            .unwrap_or(0);
        loop {
            self.visit_ring(q, home, ring, &mut best);
            let covered = (0..3).all(|d| home[d] - ring <= 0 && home[d] + ring >= self.dims[d] as i64 - 1);
            if covered {
                break;
            }
            // every point outside the searched block is at least this far away
            let mut gap = f64::INFINITY;
            for d in 0..3 {
                let lo = self.origin[d] + (home[d] - ring) as f64 * self.cell;
                let hi = self.origin[d] + (home[d] + ring + 1) as f64 * self.cell;
                gap = gap.min(q[d] - lo).min(hi - q[d]);
            }
            if best.0 != usize::MAX && best.1 < gap * gap {
                break;
            }
            ring += 1;
        }
        best
    }

    /// Indices of points within distance `r` of `q` (unordered).
    pub fn within(&self, q: &Point3<f64>, r: f64) -> Vec<usize> {
        let q = [q.x, q.y, q.z];
        let r2 = r * r;
        let span = |d: usize| {
            let lo = (((q[d] - r - self.origin[d]) / self.cell).floor() as i64).max(0);
            let hi = (((q[d] + r - self.origin[d]) / self.cell).floor() as i64).min(self.dims[d] as i64 - 1);
            (lo, hi)
        };
        let ((x0, x1), (y0, y1), (z0, z1)) = (span(0), span(1), span(2));
        let mut out = Vec::new();
        for z in z0..=z1 {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let c = (z as usize * self.dims[1] + y as usize) * self.dims[0] + x as usize;
                    for &i in &self.items[self.starts[c] as usize..self.starts[c + 1] as usize] {
                        if sq_dist(&q, &self.points[i as usize]) <= r2 {
                            out.push(i as usize);
                        }
                    }
                }
            }
        }
        out
    }

    /// Squared distance from `q` to the box of cell `(x, y, z)`.
    fn cell_dist2(&self, q: &[f64; 3], c: [i64; 3]) -> f64 {
        let mut acc = 0.0;
        for d in 0..3 {
            let lo = self.origin[d] + c[d] as f64 * self.cell;
            let hi = lo + self.cell;
            let e = (lo - q[d]).max(q[d] - hi).max(0.0);
            acc += e * e;
        }
        acc
    }

    fn visit_ring(&self, q: &[f64; 3], home: [i64; 3], ring: i64, best: &mut (usize, f64)) {
        let range = |d: usize| {
            let lo = (home[d] - ring).max(0);
            let hi = (home[d] + ring).min(self.dims[d] as i64 - 1);
            (lo, hi)
        };
        let (x0, x1) = range(0);
        let (y0, y1) = range(1);
        let (z0, z1) = range(2);
        for z in z0..=z1 {
            let zr = (z - home[2]).abs() == ring;
            for y in y0..=y1 {
                let yr = zr || (y - home[1]).abs() == ring;
                let mut x = x0;
                while x <= x1 {
                    let on_shell = yr || (x - home[0]).abs() == ring;
                    if on_shell {
                        let c = (z as usize * self.dims[1] + y as usize) * self.dims[0] + x as usize;
                        let cell = &self.items[self.starts[c] as usize..self.starts[c + 1] as usize];
                        // cells strictly beyond the current best cannot hold a winner
                        if !cell.is_empty() && self.cell_dist2(q, [x, y, z]) <= best.1 {
                            for &i in cell {
                                let d2 = sq_dist(q, &self.points[i as usize]);
                                if d2 < best.1 || (d2 == best.1 && (i as usize) < best.0) {
                                    *best = (i as usize, d2);
                                }
                            }
                        }
                        x += 1;
                    } else {
                        // interior of the shell row: jump to the far face
                        x = home[0] + ring;
                    }
                }
            }
        }
    }
}
