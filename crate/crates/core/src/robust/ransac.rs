//! Mask-constrained LO-RANSAC.
//!
//! Each iteration draws a sample size uniformly from the configured range,
//! that many distinct correspondence pixels, and one retained candidate per
//! pixel. Every new best hypothesis is locally optimised: inliers are
//! recomputed against each pixel's best-reprojecting candidate, the pose is
//! refined on them and re-scored, and the refinement is kept while the score
//! does not drop.

use nalgebra::Point2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::score::{ModelContext, Scorer};
use super::{refine_pose, solve_pnp, Correspondence, PoseHypothesis};
use crate::camera::{CameraIntrinsics, Pose};
use crate::index::{CorrespondenceSet, PixelMatch};
use crate::raster::PixelMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub iterations: usize,
    pub sample_min: usize,
    pub sample_max: usize,
    /// Minimum score for a hypothesis to count as a detection.
    pub min_score: f64,
    pub inlier_threshold_px: f64,
    /// Weight of the mask IoU against the embedding term.
    pub alpha: f64,
    /// Maximum refine-and-rescore rounds per new best hypothesis.
    pub lo_rounds: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            sample_min: 6,
            sample_max: 10,
            min_score: 0.3,
            inlier_threshold_px: 5.0,
            alpha: 0.5,
            lo_rounds: 20,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.iterations == 0 {
            return Err("iterations must be at least 1".into());
        }
        if self.sample_min < 4 || self.sample_max < self.sample_min {
            return Err("sample range must satisfy 4 <= min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err("alpha must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.min_score) {
            return Err("min_score must lie in [0, 1]".into());
        }
        if !(self.inlier_threshold_px > 0.0) {
            return Err("inlier threshold must be positive".into());
        }
        Ok(())
    }
}

/// Running best score after every iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RansacTrace {
    pub best_scores: Vec<f64>,
    /// Iterations at which the best hypothesis changed.
    pub improvements: Vec<usize>,
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Independent stream per `(seed, mask, model, iteration)`.
fn iteration_rng(seed: u64, mask_id: u32, model_id: &str, iteration: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..12].copy_from_slice(&mask_id.to_le_bytes());
    key[12..20].copy_from_slice(&fnv(model_id).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(iteration as u64);
    rng
}

/// For each pixel, the candidate with the smallest reprojection error, kept
/// when that error is below `threshold`.
pub fn inliers(pose: &Pose, matches: &[PixelMatch], cam: &CameraIntrinsics, threshold: f64) -> Vec<Correspondence> {
    let t2 = threshold * threshold;
    let mut out = Vec::new();
    for m in matches {
        let pixel = Point2::new(m.pixel[0] as f64, m.pixel[1] as f64);
        let mut best: Option<(f64, usize)> = None;
        for (k, c) in m.candidates.iter().enumerate() {
            let y = pose.transform(&c.point);
            if !(y.z > 0.0) {
                continue;
            }
            let e2 = (cam.project_unchecked(&y) - pixel).norm_squared();
            if best.is_none_or(|(b, _)| e2 < b) {
                best = Some((e2, k));
            }
        }
        if let Some((e2, k)) = best {
            if e2 < t2 {
                out.push(Correspondence {
                    pixel,
                    point: m.candidates[k].point,
                });
            }
        }
    }
    out
}

/// Best pose of one model for one mask, or `None` when nothing reaches the
/// minimum score.
pub fn estimate_pose_for_mask(
    mask_id: u32,
    mask: &PixelMask,
    correspondences: &CorrespondenceSet,
    ctx: &ModelContext,
    cam: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> (Option<PoseHypothesis>, RansacTrace) {
    let restricted = correspondences.restrict(mask);
    let matches = &restricted.matches;
    let mut trace = RansacTrace::default();
    if matches.len() < cfg.sample_min {
        return (None, trace);
    }
    let model_id = ctx.index.model_id();
    let mut scorer = Scorer::new(ctx, cam, mask, cfg.alpha);
    let mut best: Option<(Pose, f64)> = None;
    let mut sample_buf = Vec::with_capacity(cfg.sample_max);

    for it in 0..cfg.iterations {
        let mut rng = iteration_rng(cfg.seed, mask_id, model_id, it);
        let n = rng.random_range(cfg.sample_min..=cfg.sample_max).min(matches.len());
        sample_buf.clear();
        for p in sample(&mut rng, matches.len(), n) {
            let m = &matches[p];
            let c = &m.candidates[rng.random_range(0..m.candidates.len())];
            sample_buf.push(Correspondence {
                pixel: Point2::new(m.pixel[0] as f64, m.pixel[1] as f64),
                point: c.point,
            });
        }
        if let Ok(pose) = solve_pnp(&sample_buf, cam) {
            let floor = best.map_or(f64::NEG_INFINITY, |(_, s)| s);
            if let Some(score) = scorer.evaluate(&pose, floor) {
                let (mut cur_pose, mut cur_score) = (pose, score);
                for _ in 0..cfg.lo_rounds {
                    let inl = inliers(&cur_pose, matches, cam, cfg.inlier_threshold_px);
                    if inl.len() < 4 {
                        break;
                    }
                    let refined = refine_pose(&cur_pose, &inl, cam);
                    if refined == cur_pose {
                        break;
                    }
                    let s = scorer.score(&refined);
                    if s < cur_score {
                        break;
                    }
                    cur_pose = refined;
                    cur_score = s;
                }
                best = Some((cur_pose, cur_score));
                trace.improvements.push(it);
            }
        }
        trace.best_scores.push(best.map_or(0.0, |(_, s)| s));
    }

    let hypothesis = best.filter(|(_, s)| *s >= cfg.min_score).map(|(pose, score)| PoseHypothesis {
        model_id: model_id.to_string(),
        mask_id,
        pose,
        score,
        inliers: inliers(&pose, matches, cam, cfg.inlier_threshold_px),
    });
    (hypothesis, trace)
}

/// For every mask, the best-scoring model above the minimum score; ties go to
/// the earlier model.
pub fn estimate_all(
    masks: &[(u32, PixelMask)],
    correspondences: &[CorrespondenceSet],
    models: &[ModelContext],
    cam: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Vec<PoseHypothesis> {
    assert_eq!(correspondences.len(), models.len(), "one correspondence set per model");
    // every (mask, model) pair is an independent job
    let found: Vec<Option<PoseHypothesis>> = (0..masks.len() * models.len())
        .into_par_iter()
        .map(|job| {
            let (k, j) = (job / models.len(), job % models.len());
            let (mask_id, mask) = &masks[k];
            estimate_pose_for_mask(*mask_id, mask, &correspondences[j], &models[j], cam, cfg).0
        })
        .collect();
    let mut out = Vec::new();
    for per_mask in found.chunks(models.len().max(1)) {
        let mut best: Option<&PoseHypothesis> = None;
        for h in per_mask.iter().flatten() {
            if best.is_none_or(|b| h.score > b.score) {
                best = Some(h);
            }
        }
        out.extend(best.cloned());
    }
    out
}
