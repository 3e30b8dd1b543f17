//! Pose estimation from 2D-3D correspondences: PnP, refinement, scoring and
//! mask-constrained LO-RANSAC.

use nalgebra::{Point2, Point3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::Pose;

pub mod pnp;
pub mod ransac;
pub mod refine;
pub mod score;

pub use pnp::solve_pnp;
pub use ransac::{estimate_all, estimate_pose_for_mask, RansacConfig, RansacTrace};
pub use refine::{refine_pose, refine_pose_report, reprojection_cost, reprojection_jacobian, RefineReport};
pub use score::{score_pose, surface_lookup, ModelContext, Scorer};

#[derive(Debug, Error, PartialEq)]
pub enum PoseError {
    #[error("need at least 4 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate configuration: 3D points are collinear or coincident")]
    Degenerate,
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub pixel: Point2<f64>,
    pub point: Point3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseHypothesis {
    pub model_id: String,
    pub mask_id: u32,
    pub pose: Pose,
    pub score: f64,
    pub inliers: Vec<Correspondence>,
}

pub const HYPOTHESES_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisRecord {
    pub model_id: String,
    pub mask_id: u32,
    pub score: f64,
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    pub t: [f64; 3],
    pub inlier_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisFile {
    pub format_version: u32,
    pub hypotheses: Vec<HypothesisRecord>,
}

impl HypothesisRecord {
    pub fn from_hypothesis(h: &PoseHypothesis) -> Self {
        Self {
            model_id: h.model_id.clone(),
            mask_id: h.mask_id,
            score: h.score,
            rotation: h.pose.rotation_row_major(),
            t: [h.pose.translation.x, h.pose.translation.y, h.pose.translation.z],
            inlier_count: h.inliers.len(),
        }
    }

    pub fn pose(&self) -> Result<Pose, crate::camera::CameraError> {
        Pose::from_row_major(&self.rotation, &self.t)
    }
}

impl HypothesisFile {
    pub fn new(hypotheses: &[PoseHypothesis]) -> Self {
        Self {
            format_version: HYPOTHESES_FORMAT_VERSION,
            hypotheses: hypotheses.iter().map(HypothesisRecord::from_hypothesis).collect(),
        }
    }
}
