//! Hypothesis scoring: `alpha * IoU + (1 - alpha) * E`, where `E` is the mean
//! of `exp(-d^2 / 2)` over rendered pixels inside the detected mask and `d`
//! is the embedding distance between the pixel's value and the model point
//! rendered there.
//!
//! [`Scorer::evaluate`] takes the running best score and abandons a
//! hypothesis as soon as an upper bound shows it cannot beat it; a returned
//! score is always the exact value.

use std::borrow::Cow;

use nalgebra::Point3;

use super::RansacConfig;
use crate::camera::{CameraIntrinsics, Pose};
use crate::index::{CorrespondenceSet, IndexError, LseIndex};
use crate::lookup::TriangleLookup;
use crate::lsemap::LseMap;
use crate::mesh::SurfaceMesh;
use crate::raster::{rasterize, PixelMask, Window, DEFAULT_NEAR};

/// Guards the pruning bounds against accumulated rounding.
const BOUND_SLACK: f64 = 1e-9;

/// Per-model data shared by every mask of a scene.
#[derive(Debug, Clone)]
pub struct ModelContext<'a> {
    pub mesh: &'a SurfaceMesh,
    pub index: &'a LseIndex,
    dim: usize,
    /// Pixel embeddings normalised with the index statistics.
    map_normalized: Vec<f64>,
    map_valid: Vec<bool>,
    /// Per-pixel upper bound on `exp(-d^2 / 2)` over all index entries.
    pixel_bound: Vec<f64>,
    /// Flattened normalised entry embeddings.
    entry_values: Vec<f64>,
    corners: [Point3<f64>; 8],
    map_height: usize,
    lookup: Cow<'a, TriangleLookup>,
}

impl<'a> ModelContext<'a> {
    pub fn new(mesh: &'a SurfaceMesh, index: &'a LseIndex, map: &LseMap) -> Result<Self, IndexError> {
        Self::build(mesh, index, Cow::Owned(surface_lookup(mesh, index)), map)
    }

    /// Like [`ModelContext::new`], reusing a lookup from [`surface_lookup`].
    pub fn with_lookup(
        mesh: &'a SurfaceMesh,
        index: &'a LseIndex,
        lookup: &'a TriangleLookup,
        map: &LseMap,
    ) -> Result<Self, IndexError> {
        Self::build(mesh, index, Cow::Borrowed(lookup), map)
    }

    fn build(
        mesh: &'a SurfaceMesh,
        index: &'a LseIndex,
        lookup: Cow<'a, TriangleLookup>,
        map: &LseMap,
    ) -> Result<Self, IndexError> {
        let dim = index.dim();
        if map.channels as usize != dim {
            return Err(IndexError::DimensionMismatch(format!(
                "map has {} channels, index has {dim}",
                map.channels
            )));
        }
        let mut map_normalized = vec![f64::NAN; map.pixel_count() * dim];
        let mut map_valid = vec![false; map.pixel_count()];
        for i in 0..map.pixel_count() {
            if map.is_valid(i) {
                map_valid[i] = true;
                index.normalize_into(map.pixel(i), &mut map_normalized[i * dim..(i + 1) * dim]);
            }
        }
        let (lo, hi) = mesh.bounding_box();
        let corners = [0, 1, 2, 3, 4, 5, 6, 7].map(|k| {
            Point3::new(
                if k & 1 == 0 { lo.x } else { hi.x },
                if k & 2 == 0 { lo.y } else { hi.y },
                if k & 4 == 0 { lo.z } else { hi.z },
            )
        });
        Ok(Self {
            mesh,
            index,
            dim,
            map_normalized,
            pixel_bound: vec![1.0; map_valid.len()],
            map_valid,
            entry_values: index.entries().iter().flat_map(|e| e.normalized.iter().copied()).collect(),
            corners,
            map_height: map.height as usize,
            lookup,
        })
    }
}

/// Nearest-entry lookup for points on `mesh`, shareable across scenes.
pub fn surface_lookup(mesh: &SurfaceMesh, index: &LseIndex) -> TriangleLookup {
    let positions: Vec<Point3<f64>> = index.entries().iter().map(|e| e.sample.position).collect();
    TriangleLookup::new(mesh, &positions)
}

impl ModelContext<'_> {
    /// Tightens the embedding bound with each matched pixel's distance to its
    /// nearest index entry, which no rendered point can beat.
    pub fn with_match_bounds(mut self, matches: &CorrespondenceSet) -> Self {
        let width = self.pixel_bound.len() / self.map_height.max(1);
        for m in &matches.matches {
            if let Some(first) = m.candidates.first() {
                let g = m.pixel[1] as usize * width + m.pixel[0] as usize;
                self.pixel_bound[g] = ((-0.5 * first.distance * first.distance).exp() * (1.0 + BOUND_SLACK)).min(1.0);
            }
        }
        self
    }
}

/// Scores poses of one model against one mask, reusing render buffers.
pub struct Scorer<'c, 'a> {
    ctx: &'c ModelContext<'a>,
    cam: CameraIntrinsics,
    mask: &'c PixelMask,
    mask_count: u64,
    /// Summed-area table of the mask, `(w + 1) x (h + 1)`.
    sat: Vec<u32>,
    alpha: f64,
    cam_vertices: Vec<Point3<f64>>,
    depth: Vec<f64>,
    points: Vec<Point3<f64>>,
    cells: Vec<u32>,
    /// Bounding window of the mask pixels.
    mask_window: Window,
    /// Depth buffer of the coverage-only pass outside `mask_window`.
    outer_depth: Vec<f64>,
}

impl<'c, 'a> Scorer<'c, 'a> {
    pub fn new(ctx: &'c ModelContext<'a>, cam: &CameraIntrinsics, mask: &'c PixelMask, alpha: f64) -> Self {
        let (w, h) = (mask.width as usize, mask.height as usize);
        let mut sat = vec![0u32; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u32;
            for x in 0..w {
                row += mask.data[y * w + x] as u32;
                sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
            }
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..h {
            for x in 0..w {
                if mask.data[y * w + x] {
                    (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
                }
            }
        }
        let mask_window = if x0 == usize::MAX {
            Window { x0: 0, y0: 0, w: 0, h: 0 }
        } else {
            Window {
                x0: x0 as i64,
                y0: y0 as i64,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            }
        };
        Self {
            ctx,
            cam: *cam,
            mask,
            mask_count: mask.count() as u64,
            sat,
            alpha,
            cam_vertices: Vec::with_capacity(ctx.mesh.vertices().len()),
            depth: Vec::new(),
            points: Vec::new(),
            cells: Vec::new(),
            mask_window,
            outer_depth: Vec::new(),
        }
    }

    fn mask_in_rect(&self, x0: i64, y0: i64, x1: i64, y1: i64) -> u64 {
        let w = self.mask.width as usize + 1;
        let (x0, y0) = (x0.max(0) as usize, y0.max(0) as usize);
        let x1 = (x1 + 1).min(self.mask.width as i64) as usize;
        let y1 = (y1 + 1).min(self.mask.height as i64) as usize;
        if x1 <= x0 || y1 <= y0 {
            return 0;
        }
        (self.sat[y1 * w + x1] + self.sat[y0 * w + x0] - self.sat[y0 * w + x1] - self.sat[y1 * w + x0]) as u64
    }

    /// Upper bounds on IoU and on whether any overlap exists, from the
    /// projected model bounding box.
    fn corner_bound(&self, pose: &Pose) -> (f64, bool) {
        if self.mask_count == 0 {
            return (0.0, false);
        }
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) =
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for c in &self.ctx.corners {
            let p = pose.transform(c);
            if !(p.z >= DEFAULT_NEAR) {
                return (1.0, true);
            }
            let s = self.cam.project_unchecked(&p);
            lo_x = lo_x.min(s.x);
            lo_y = lo_y.min(s.y);
            hi_x = hi_x.max(s.x);
            hi_y = hi_y.max(s.y);
        }
        let inside = self.mask_in_rect(lo_x.ceil() as i64, lo_y.ceil() as i64, hi_x.floor() as i64, hi_y.floor() as i64);
        (inside as f64 / self.mask_count as f64, inside > 0)
    }

    /// Exact score.
    pub fn score(&mut self, pose: &Pose) -> f64 {
        self.evaluate(pose, f64::NEG_INFINITY).expect("any score beats -inf")
    }

    /// The exact score if it is strictly greater than `best`, else `None`.
    pub fn evaluate(&mut self, pose: &Pose, best: f64) -> Option<f64> {
        let alpha = self.alpha;
        let (iou_ub, any) = self.corner_bound(pose);
        if alpha * iou_ub + (1.0 - alpha) * (any as u8 as f64) + BOUND_SLACK <= best {
            return None;
        }

        let mesh = self.ctx.mesh;
        self.cam_vertices.clear();
        self.cam_vertices.extend(mesh.vertices().iter().map(|v| pose.transform(v)));
        let covering = Window::covering(&self.cam_vertices, &self.cam, DEFAULT_NEAR);
        // only pixels inside the mask window contribute to the overlap and E
        let window = covering.intersect(&self.mask_window);
        if window.is_empty() {
            return (0.0 > best).then_some(0.0);
        }
        self.depth.clear();
        self.depth.resize(window.len(), f64::INFINITY);
        self.points.resize(window.len(), Point3::origin());
        self.cells.resize(window.len(), 0);
        let points = &mut self.points;
        let cells = &mut self.cells;
        let lookup = &self.ctx.lookup;
        rasterize(
            &self.cam_vertices,
            mesh.triangles(),
            &self.cam,
            &window,
            DEFAULT_NEAR,
            &mut self.depth,
            |idx, _z, tri, bary| {
                let [a, b, c] = mesh.triangles()[tri as usize];
                let v = mesh.vertices();
                points[idx] = Point3::from(
                    v[a as usize].coords * bary[0] + v[b as usize].coords * bary[1] + v[c as usize].coords * bary[2],
                );
                cells[idx] = lookup.cell(tri, bary);
            },
        );

        let width = self.cam.width as usize;
        let (mut rendered_inner, mut inter, mut valid) = (0u64, 0u64, 0u64);
        let mut bound_sum = 0.0;
        for ly in 0..window.h {
            for lx in 0..window.w {
                if self.depth[ly * window.w + lx].is_finite() {
                    rendered_inner += 1;
                    let g = (window.y0 as usize + ly) * width + window.x0 as usize + lx;
                    if self.mask.data[g] {
                        inter += 1;
                        if self.ctx.map_valid[g] {
                            valid += 1;
                            bound_sum += self.ctx.pixel_bound[g];
                        }
                    }
                }
            }
        }
        // rendering outside the mask window only grows the union
        let exact_iou = |rendered: u64| {
            let union = rendered + self.mask_count - inter;
            if union == 0 {
                0.0
            } else {
                inter as f64 / union as f64
            }
        };
        let complete = window == covering;
        let iou_ub = exact_iou(rendered_inner);
        let e_bound = if valid == 0 { 0.0 } else { (bound_sum / valid as f64).min(1.0) };
        if alpha * iou_ub + (1.0 - alpha) * e_bound + BOUND_SLACK <= best {
            return None;
        }

        let dim = self.ctx.dim;
        let n = valid as f64;
        let mut sum = 0.0;
        let mut remaining = bound_sum;
        for ly in 0..window.h {
            for lx in 0..window.w {
                let l = ly * window.w + lx;
                if !self.depth[l].is_finite() {
                    continue;
                }
                let g = (window.y0 as usize + ly) * width + window.x0 as usize + lx;
                if !(self.mask.data[g] && self.ctx.map_valid[g]) {
                    continue;
                }
                let (entry, _) = self.ctx.lookup.nearest(self.cells[l], &self.points[l]);
                let q = &self.ctx.map_normalized[g * dim..(g + 1) * dim];
                let e = &self.ctx.entry_values[entry * dim..(entry + 1) * dim];
                let d2: f64 = q.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                sum += (-0.5 * d2).exp();
                remaining -= self.ctx.pixel_bound[g];
                if alpha * iou_ub + (1.0 - alpha) * (sum + remaining.max(0.0)) / n + BOUND_SLACK <= best {
                    return None;
                }
            }
        }
        let e_term = if valid == 0 { 0.0 } else { sum / n };
        let iou = if complete {
            iou_ub
        } else {
            if alpha * iou_ub + (1.0 - alpha) * e_term + BOUND_SLACK <= best {
                return None;
            }
            self.outer_depth.clear();
            self.outer_depth.resize(covering.len(), f64::INFINITY);
            rasterize(
                &self.cam_vertices,
                mesh.triangles(),
                &self.cam,
                &covering,
                DEFAULT_NEAR,
                &mut self.outer_depth,
                |_, _, _, _| {},
            );
            exact_iou(self.outer_depth.iter().filter(|d| d.is_finite()).count() as u64)
        };
        let score = alpha * iou + (1.0 - alpha) * e_term;
        (score > best).then_some(score)
    }
}

/// One-shot score of `pose` for `mask`.
pub fn score_pose(
    pose: &Pose,
    mesh: &SurfaceMesh,
    cam: &CameraIntrinsics,
    mask: &PixelMask,
    map: &LseMap,
    index: &LseIndex,
    cfg: &RansacConfig,
) -> Result<f64, IndexError> {
    let ctx = ModelContext::new(mesh, index, map)?;
    Ok(Scorer::new(&ctx, cam, mask, cfg.alpha).score(pose))
}
